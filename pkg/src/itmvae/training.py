"""Optimization loops.

Adam drives the network, topic bank, and batch-norm parameters; the Gamma
hyper-prior parameters (gamma1, gamma2) follow a plain SGD ascent rule with
a positivity floor; the corpus-level Beta posterior (u, v) is updated in
closed form every `period` epochs from indicator statistics accumulated
during that epoch's regular training pass.

All gradients here are of the descent loss (-mean ELBO); both optimizers
subtract, which is ascent on the bound.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import engine as eng
from . import stochastic as st
from .corpus import count_matrix
from .engine import EngineError
from .evaluation import perplexity
from .models import (
    TopicModel, elbo_hier, elbo_hp, elbo_itmvae, hier_corpus_term,
    validate_config,
)

__all__ = [
    "TrainingError", "Adam", "TrainSchedule",
    "hyperprior_step", "mean_field_update", "fit",
]


class TrainingError(RuntimeError):
    pass


class Adam(object):
    """Standard Adam with bias correction. A step is skipped wholesale if
    any gradient is non-finite (the caller records the incident)."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise TrainingError("duplicate parameter names in optimizer")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                return False
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p.data[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def adam_step(optimizer):
    """Functional form of Adam.step: one update from the gradients currently
    accumulated on the optimizer's parameters. Returns True when applied,
    False when skipped because a gradient was non-finite."""
    return optimizer.step()


def hyperprior_step(gamma_shape, gamma_rate, lr=0.01, floor=1e-4, clip=10.0):
    """SGD step for (gamma1, gamma2) with a positivity floor. Returns False
    (no update) when a gradient is non-finite.

    Gradients are clipped per coordinate: near the prior init the objective
    curvature in gamma2 scales like gamma1/gamma2^2, which makes unclipped
    lr=0.01 steps overshoot by orders of magnitude and oscillate to
    divergence. Clipping keeps the ascent direction and leaves the
    stationary point untouched.
    """
    pair = (gamma_shape, gamma_rate)
    if not all(np.all(np.isfinite(p.grad)) for p in pair):
        return False
    for p in pair:
        step = lr * np.clip(p.grad, -clip, clip)
        p.data[...] = np.maximum(p.data - step, floor)
    return True


def mean_field_update(phi_sums, gamma):
    """Closed-form coordinate update of the corpus Beta posterior.

    phi_sums[i] = sum over documents and sticks of the indicator posterior
    mass on atom i (softmax probabilities, not Gumbel samples), length T.
    Returns (u, v), each length T-1:
      u_i = 1 + phi_sums[i]
      v_i = gamma + sum_{l>i} phi_sums[l]
    """
    s = np.asarray(phi_sums, dtype=np.float64)
    tail = np.cumsum(s[::-1])[::-1]       # tail[i] = sum_{l >= i} s[l]
    return 1.0 + s[:-1], float(gamma) + tail[1:]


@dataclass
class TrainSchedule:
    epochs: int
    batch_size: int = 64
    seed: int = 0
    lr: float = 0.01
    hyper_lr: float = 0.01
    period: int = 1            # mean-field update cadence in epochs (hier)
    patience: int = 10         # early stopping on validation perplexity
    checkpoint_every: int = 0  # 0 = only best/final checkpoints
    eval_samples: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.period < 1:
            raise TrainingError("epochs, batch_size, and period must be >= 1")
        if self.lr <= 0 or self.hyper_lr <= 0:
            raise TrainingError("learning rates must be positive")
        if self.patience < 0 or self.checkpoint_every < 0:
            raise TrainingError("patience and checkpoint_every must be >= 0")
        if self.eval_samples < 1:
            raise TrainingError("eval_samples must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise TrainingError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


def _temperature(cfg, epoch, epochs):
    if epochs <= 1:
        return cfg.temp_final
    frac = (epoch - 1) / (epochs - 1)
    return cfg.temp_init + (cfg.temp_final - cfg.temp_init) * frac


def fit(train, valid, config, schedule, run_dir=None):
    """Minibatch SGVB. Returns (model, log) where log is the list of
    per-epoch dicts also written as JSON lines to <run_dir>/train_log.jsonl.

    The model is returned at its best-validation state when a validation
    corpus is given, otherwise at the final state. A non-finite forward
    pass aborts training; the last best.ckpt on disk is retained.
    """
    validate_config(config)
    if train.vocab_size != config.vocab_size:
        raise TrainingError(f"corpus vocabulary size {train.vocab_size} does not "
                            f"match config vocab_size {config.vocab_size}")
    empties = sum(1 for doc in train.documents if doc.num_words == 0)
    if empties:
        raise TrainingError(f"training corpus contains {empties} empty documents")

    init_ss, noise_ss, shuffle_ss, eval_ss = np.random.SeedSequence(schedule.seed).spawn(4)
    init_rng = np.random.default_rng(init_ss)
    noise_rng = np.random.default_rng(noise_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eval_rng = np.random.default_rng(eval_ss)

    cfg = config
    model = TopicModel(cfg, init_rng)
    opt = Adam(model.parameters(), lr=schedule.lr)
    mat = count_matrix(train)
    d = train.num_docs
    hier = cfg.variant == "hier"
    hp = cfg.variant == "hp"

    log = []
    log_fh = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "train_log.jsonl"), "w", encoding="utf-8")
    best_ppl = np.inf
    best_arrays = None
    best_epoch = 0
    since_best = 0

    try:
        for epoch in range(1, schedule.epochs + 1):
            temp = _temperature(cfg, epoch, schedule.epochs)
            model.training = True
            perm = shuffle_rng.permutation(d)
            phi_stats = np.zeros(cfg.T) if hier else None
            elbo_sum = 0.0
            skipped = []
            for bi, start in enumerate(range(0, d, schedule.batch_size)):
                idx = perm[start:start + schedule.batch_size]
                counts = mat[idx]
                noise = noise_rng.uniform(size=(len(idx), cfg.K - 1))
                try:
                    if hp:
                        elbo = elbo_hp(model, counts, noise, dataset_size=d)
                    elif hier:
                        gum = st.gumbel_from_uniform(
                            noise_rng.uniform(size=(len(idx), cfg.K, cfg.T)))
                        elbo, phi = elbo_hier(model, counts, noise, gum, temp)
                        phi_stats += phi.data.sum(axis=(0, 1))
                    else:
                        elbo = elbo_itmvae(model, counts, noise)
                    loss = -eng.tmean(elbo)
                    opt.zero_grad()
                    if hp:
                        model.gamma_shape.zero_grad()
                        model.gamma_rate.zero_grad()
                    eng.backward(loss)
                except EngineError as err:
                    raise TrainingError(
                        f"aborted at epoch {epoch}, batch {bi}: {err}") from err
                ok = opt.step()
                if hp:
                    ok = hyperprior_step(model.gamma_shape, model.gamma_rate,
                                         lr=schedule.hyper_lr) and ok
                if not ok:
                    skipped.append(bi)
                elbo_sum += float(elbo.data.sum())

            if hier and epoch % schedule.period == 0:
                model.stick_u, model.stick_v = mean_field_update(phi_stats, cfg.gamma)
            model.training = False

            epoch_elbo = elbo_sum / d
            if hier:
                epoch_elbo += hier_corpus_term(model) / d
            entry = {"epoch": epoch, "elbo": epoch_elbo, "valid_ppl": None,
                     "lr": schedule.lr, "temp": temp}
            if hp:
                e_alpha, _ = st.gamma_expectations(model.gamma_shape.data,
                                                   model.gamma_rate.data)
                entry["e_alpha"] = float(e_alpha)
            if skipped:
                entry["skipped_batches"] = skipped

            if valid is not None:
                ppl = perplexity(model, valid, samples=schedule.eval_samples,
                                 rng=eval_rng)
                entry["valid_ppl"] = ppl
                if ppl < best_ppl:
                    best_ppl = ppl
                    best_epoch = epoch
                    best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
                    since_best = 0
                    if run_dir is not None:
                        model.save(os.path.join(run_dir, "best.ckpt"),
                                   {"epoch": epoch, "valid_ppl": ppl})
                else:
                    since_best += 1

            log.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if run_dir is not None and schedule.checkpoint_every and \
                    epoch % schedule.checkpoint_every == 0:
                model.save(os.path.join(run_dir, f"{epoch}.ckpt"), {"epoch": epoch})

            if valid is not None and since_best >= schedule.patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if best_arrays is not None:
        model.load_state_arrays(best_arrays)
    if run_dir is not None:
        model.save(os.path.join(run_dir, f"{log[-1]['epoch']}.ckpt"),
                   {"epoch": log[-1]["epoch"]})
        if best_arrays is None:
            model.save(os.path.join(run_dir, "best.ckpt"),
                       {"epoch": log[-1]["epoch"], "valid_ppl": None})
    return model, log
