"""The four model variants: config, encoder, decode paths, ELBO assembly.

Variants
  itmvae   mixture decode,  fixed Beta(1, alpha) stick prior
  prod     product decode,  fixed Beta(1, alpha) stick prior
  hp       product decode,  Gamma(s1, s2) hyper prior on alpha
  hier     mixture decode over a shared corpus pool of T atoms selected by
           per-document relaxed indicators

ELBO functions return the per-document bound, shape [B], so the same code
serves training (mean over batch) and perplexity (per-word normalization).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import engine as eng
from . import stochastic as st
from .engine import Parameter, Tensor, BatchNormState

VARIANTS = ("itmvae", "prod", "hp", "hier")

__all__ = [
    "VARIANTS", "ModelError", "ModelConfig", "validate_config", "config_hash",
    "TopicBank", "VariationalOutput", "TopicModel",
    "mixture_decode", "prod_decode", "hier_decode",
    "elbo_itmvae", "elbo_hp", "elbo_hier", "hier_corpus_term",
]


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str
    vocab_size: int
    K: int
    T: int = None              # corpus truncation, hier only
    alpha: float = 20.0        # document-level concentration
    gamma: float = None        # corpus-level concentration, hier only
    s1: float = 1.0            # Gamma hyper-prior shape, hp only
    s2: float = 0.05           # Gamma hyper-prior rate, hp only
    hidden_sizes: tuple = (256, 256)
    kl_terms: int = 10         # series depth for the Kumaraswamy/Beta KL
    temp_init: float = 1.0     # Gumbel-Softmax temperature schedule (hier)
    temp_final: float = 1.0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)

    @property
    def bank_rows(self):
        return max(self.K, self.T or 0)

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def validate_config(cfg):
    """Boundary validation. Note the model itself tolerates K=1 (degenerate,
    used by evaluation oracles); training and the CLI require K >= 2."""
    if cfg.variant not in VARIANTS:
        raise ModelError(f"unknown variant '{cfg.variant}' (expected one of {VARIANTS})")
    if cfg.vocab_size < 2:
        raise ModelError(f"vocab_size must be >= 2, got {cfg.vocab_size}")
    if cfg.K < 2:
        raise ModelError(f"K must be >= 2, got {cfg.K}")
    if cfg.alpha is None or cfg.alpha <= 0:
        raise ModelError(f"alpha must be positive, got {cfg.alpha}")
    if cfg.variant == "hier":
        if cfg.T is None:
            raise ModelError("T required for hier")
        if cfg.T < 2:
            raise ModelError(f"T must be >= 2 for hier, got {cfg.T}")
        if cfg.gamma is None or cfg.gamma <= 0:
            raise ModelError(f"gamma must be positive for hier, got {cfg.gamma}")
    if cfg.variant == "hp" and (cfg.s1 <= 0 or cfg.s2 <= 0):
        raise ModelError(f"hyper-prior parameters must be positive, got ({cfg.s1}, {cfg.s2})")
    if not cfg.hidden_sizes or any(h < 1 for h in cfg.hidden_sizes):
        raise ModelError(f"hidden_sizes must be positive, got {cfg.hidden_sizes}")
    if cfg.kl_terms < 1:
        raise ModelError(f"kl_terms must be >= 1, got {cfg.kl_terms}")
    if cfg.temp_init <= 0 or cfg.temp_final <= 0:
        raise ModelError("Gumbel temperatures must be positive")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _glorot(rng, fan_in, fan_out, name):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name)


class TopicBank:
    """Topic logits phi, one row per topic/atom; row k softmaxes to the
    word distribution of topic k."""

    def __init__(self, rows, vocab_size, rng):
        limit = np.sqrt(6.0 / (rows + vocab_size))
        self.phi = Parameter(rng.uniform(-limit, limit, size=(rows, vocab_size)),
                             name="bank.phi")

    @property
    def rows(self):
        return self.phi.shape[0]

    def topic_distributions(self):
        return eng.softmax(self.phi.data, axis=-1)


@dataclass
class VariationalOutput:
    a: object                    # Kumaraswamy a, [B, K-1]
    b: object                    # Kumaraswamy b, [B, K-1]
    indicator_logits: object = None   # [B, K, T], hier only


class TopicModel:
    """Parameter container plus the amortized encoder.

    The encoder is a stack of softplus-activated affine layers feeding two
    batch-normalized heads for (a, b) (softplus + 1e-3 floor keeps them
    positive) and, for hier, a plain logits head for the indicators.
    """

    def __init__(self, config, rng):
        cfg = config
        self.config = cfg
        self.training = False
        widths = [cfg.vocab_size, *cfg.hidden_sizes]
        self.layers = []
        for i, (fin, fout) in enumerate(zip(widths[:-1], widths[1:])):
            self.layers.append((_glorot(rng, fin, fout, f"enc{i}.W"),
                                Parameter(np.zeros(fout), name=f"enc{i}.b")))
        h = widths[-1]
        ks = cfg.K - 1
        # no bias on the (a, b) heads: batch norm subtracts the batch mean,
        # so a bias there is exactly cancelled (its gradient is zero)
        self.head_a = _glorot(rng, h, ks, "head_a.W")
        self.head_b = _glorot(rng, h, ks, "head_b.W")
        self.bn_a = BatchNormState(ks, name="bn_a")
        self.bn_b = BatchNormState(ks, name="bn_b")
        if cfg.variant == "hier":
            self.head_c = (_glorot(rng, h, cfg.K * cfg.T, "head_c.W"),
                           Parameter(np.zeros(cfg.K * cfg.T), name="head_c.b"))
            # mean-field Beta posterior over corpus sticks, initialized at
            # the Beta(1, gamma) prior; updated in closed form, not by Adam
            self.stick_u = np.ones(cfg.T - 1)
            self.stick_v = np.full(cfg.T - 1, float(cfg.gamma))
        if cfg.variant == "hp":
            # initialized equal to the prior (s1, s2)
            self.gamma_shape = Parameter(np.array(float(cfg.s1)), name="gamma1")
            self.gamma_rate = Parameter(np.array(float(cfg.s2)), name="gamma2")
        self.bank = TopicBank(cfg.bank_rows, cfg.vocab_size, rng)

    def parameters(self):
        """Everything Adam updates. Excludes (gamma1, gamma2), which follow
        their own SGD rule, and (stick_u, stick_v), which are mean-field."""
        ps = []
        for w, b in self.layers:
            ps += [w, b]
        ps += [self.head_a, self.head_b]
        ps += self.bn_a.parameters() + self.bn_b.parameters()
        if self.config.variant == "hier":
            ps += [*self.head_c]
        ps.append(self.bank.phi)
        return ps

    def encode(self, counts):
        x = counts if isinstance(counts, Tensor) else Tensor(np.asarray(counts, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.config.vocab_size:
            raise ModelError(
                f"encoder input width {x.shape[-1] if x.ndim else 0} does not match "
                f"vocabulary size {self.config.vocab_size}")
        h = x
        for w, b in self.layers:
            h = eng.softplus(eng.affine(h, w, b))
        a = eng.softplus(eng.batch_norm(eng.matmul(h, self.head_a), self.bn_a, self.training)) + 1e-3
        b = eng.softplus(eng.batch_norm(eng.matmul(h, self.head_b), self.bn_b, self.training)) + 1e-3
        logits = None
        if self.config.variant == "hier":
            flat = eng.affine(h, *self.head_c)
            logits = eng.reshape(flat, (x.shape[0], self.config.K, self.config.T))
        return VariationalOutput(a=a, b=b, indicator_logits=logits)

    # -- persistence --------------------------------------------------------
    def state_arrays(self):
        arrays = {p.name: p.data for p in self.parameters()}
        arrays.update(self.bn_a.state_arrays("bn_a"))
        arrays.update(self.bn_b.state_arrays("bn_b"))
        if self.config.variant == "hp":
            arrays["gamma1"] = self.gamma_shape.data
            arrays["gamma2"] = self.gamma_rate.data
        if self.config.variant == "hier":
            arrays["stick_u"] = self.stick_u
            arrays["stick_v"] = self.stick_v
        return arrays

    def load_state_arrays(self, arrays):
        for name, current in self.state_arrays().items():
            if name not in arrays:
                raise ModelError(f"checkpoint missing array '{name}'")
            incoming = arrays[name]
            if incoming.shape != current.shape:
                raise ModelError(f"checkpoint array '{name}' has shape "
                                 f"{incoming.shape}, expected {current.shape}")
            current[...] = incoming

    def save(self, path, extra_meta=None):
        meta = {"config": self.config.to_dict(), "config_hash": config_hash(self.config)}
        meta.update(extra_meta or {})
        eng.save_checkpoint(path, self.state_arrays(), meta=meta)

    @classmethod
    def load(cls, path):
        arrays, meta = eng.load_checkpoint(path)
        cfg = ModelConfig.from_dict(meta["config"])
        model = cls(cfg, rng=np.random.default_rng(0))
        model.load_state_arrays(arrays)
        return model, meta


# -- decode paths ------------------------------------------------------------

def _rows_for(pi):
    shape = pi.shape if isinstance(pi, (Tensor, np.ndarray)) else np.shape(pi)
    return shape[-1]


def mixture_decode(pi, bank):
    """theta_bar = sum_k pi_k softmax(phi_k): mix the word distributions."""
    k = _rows_for(pi)
    theta = eng.softmax(eng.take_rows(bank.phi, k), axis=-1)
    if getattr(pi, "ndim", np.ndim(pi)) == 1:
        return eng.reshape(eng.matmul(eng.reshape(pi, (1, k)), theta), (-1,))
    return eng.matmul(pi, theta)


def prod_decode(pi, bank):
    """theta_hat = softmax(sum_k pi_k phi_k): mix the logits (weighted
    product of experts after normalization)."""
    k = _rows_for(pi)
    phi = eng.take_rows(bank.phi, k)
    if getattr(pi, "ndim", np.ndim(pi)) == 1:
        return eng.reshape(eng.softmax(eng.matmul(eng.reshape(pi, (1, k)), phi), axis=-1), (-1,))
    return eng.softmax(eng.matmul(pi, phi), axis=-1)


def hier_decode(pi, c_relaxed, bank):
    """theta_bar = sum_k pi_k sum_i c_ki softmax(phi_i) with c rows on the
    T-simplex; computed as (sum_k pi_k c_k.) @ theta to stay 2-D."""
    single = getattr(pi, "ndim", np.ndim(pi)) == 1
    if single:
        k = _rows_for(pi)
        pi = eng.reshape(pi, (1, k))
        c_relaxed = eng.reshape(c_relaxed, (1, k, c_relaxed.shape[-1]))
    b, k = pi.shape
    t = c_relaxed.shape[-1]
    mix = eng.tsum(eng.reshape(pi, (b, k, 1)) * c_relaxed, axis=1)
    theta = eng.softmax(eng.take_rows(bank.phi, t), axis=-1)
    out = eng.matmul(mix, theta)
    if single:
        return eng.reshape(out, (-1,))
    return out


# -- ELBOs -------------------------------------------------------------------

def _recon_mixture(counts, theta_bar):
    return eng.tsum(counts * eng.log(eng.clamp(theta_bar, 1e-300, None)), axis=1)


def elbo_itmvae(model, counts, noise):
    """Per-document ELBO for the itmvae/prod variants:
    sum_w count log theta_bar[w] - sum_k KL(Kumaraswamy_k || Beta(1, alpha)).

    counts: [B, V] array; noise: [B, K-1] uniforms. Returns [B] Tensor.
    """
    cfg = model.config
    counts = np.asarray(counts, dtype=np.float64)
    vo = model.encode(counts)
    nu = st.kumaraswamy_sample(vo.a, vo.b, noise)
    pi = st.stick_break(nu)
    if cfg.variant == "prod":
        logits = eng.matmul(pi, eng.take_rows(model.bank.phi, cfg.K))
        recon = eng.tsum(counts * eng.log_softmax(logits, axis=-1), axis=1)
    else:
        recon = _recon_mixture(counts, mixture_decode(pi, model.bank))
    kl = st.kl_kumaraswamy_beta(vo.a, vo.b, cfg.alpha, cfg.kl_terms)
    return recon - eng.tsum(kl, axis=1)


def elbo_hp(model, counts, noise, dataset_size=None):
    """Per-document ELBO with the Gamma hyper prior on alpha (prod decode):

      recon + sum_k (E[log a] + (E[a]-1) log(1-nu_k))   expected stick prior
            - sum_k log q(nu_k | a_k, b_k)              sampled entropy
            - KL(q(alpha) || Gamma(s1, s2)) / dataset_size

    The last term amortizes the corpus-level KL across documents; pass
    dataset_size=None to omit it (held-out per-document scoring).
    """
    cfg = model.config
    counts = np.asarray(counts, dtype=np.float64)
    vo = model.encode(counts)
    nu = st.kumaraswamy_sample(vo.a, vo.b, noise)
    pi = st.stick_break(nu)
    logits = eng.matmul(pi, eng.take_rows(model.bank.phi, cfg.K))
    recon = eng.tsum(counts * eng.log_softmax(logits, axis=-1), axis=1)
    e_alpha, e_log_alpha = st.gamma_expectations(model.gamma_shape, model.gamma_rate)
    prior = eng.tsum(e_log_alpha + (e_alpha - 1.0) * eng.log1p(-nu), axis=1)
    entropy = eng.tsum(st.log_pdf_kumaraswamy(nu, vo.a, vo.b), axis=1)
    elbo = recon + prior - entropy
    if dataset_size is not None:
        klg = st.kl_gamma(model.gamma_shape, model.gamma_rate, cfg.s1, cfg.s2)
        elbo = elbo - klg / float(dataset_size)
    return elbo


def elbo_hier(model, counts, noise, gumbels, temperature):
    """Per-document terms of the hierarchical ELBO. Returns (elbo [B],
    phi [B, K, T]) where phi are the indicator posteriors (softmax of the
    logits, not the Gumbel relaxation); the caller accumulates phi for the
    corpus-level mean-field update. The corpus Beta term (hier_corpus_term)
    is applied once per epoch by training, not per document.
    """
    cfg = model.config
    counts = np.asarray(counts, dtype=np.float64)
    vo = model.encode(counts)
    nu = st.kumaraswamy_sample(vo.a, vo.b, noise)
    pi = st.stick_break(nu)
    c = st.gumbel_softmax_sample(vo.indicator_logits, temperature, gumbels)
    recon = _recon_mixture(counts, hier_decode(pi, c, model.bank))
    kl_nu = eng.tsum(st.kl_kumaraswamy_beta(vo.a, vo.b, cfg.alpha, cfg.kl_terms), axis=1)
    elw = st.expected_log_weights(model.stick_u, model.stick_v)   # [T], constants
    phi = eng.softmax(vo.indicator_logits, axis=-1)
    log_phi = eng.log_softmax(vo.indicator_logits, axis=-1)
    indicators = eng.tsum(phi * (elw - log_phi), axis=(1, 2))
    return recon - kl_nu + indicators, phi


def hier_corpus_term(model):
    """Corpus-level part of the hierarchical bound, numpy scalar:
    -sum_i KL(Beta(u_i, v_i) || Beta(1, gamma))."""
    return -float(np.sum(st.kl_beta(model.stick_u, model.stick_v,
                                    1.0, model.config.gamma)))
