"""Distributional building blocks for stick-breaking variational posteriors.

All functions dispatch on input type through the engine ops: Tensor inputs
extend the autodiff graph, plain arrays/floats evaluate in numpy. Noise
(uniforms, Gumbels) is always passed in explicitly so that a forward pass
is deterministic given the noise, which keeps gradient checking honest.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

from .engine import (
    Tensor, clamp, digamma, exp, expm1, lgamma, log, softmax, _accumulate,
    _checked,
)

EPS = 1e-7

__all__ = [
    "EPS", "kumaraswamy_sample", "kumaraswamy_mean", "stick_break",
    "kl_kumaraswamy_beta", "log_pdf_kumaraswamy", "log_pdf_beta1",
    "gumbel_from_uniform", "gumbel_softmax_sample",
    "kl_gamma", "gamma_expectations",
    "beta_log_expectations", "expected_log_weights", "kl_beta",
]


def kumaraswamy_sample(a, b, u):
    """Draw nu ~ Kumaraswamy(a, b) from uniform noise u via the inverse CDF
    nu = (1 - (1-u)^(1/b))^(1/a), computed in log space for stability.
    Both u and the result are clamped to [EPS, 1-EPS]."""
    u = np.clip(np.asarray(u, dtype=np.float64), EPS, 1.0 - EPS)
    inner = -(expm1(np.log1p(-u) / b))       # 1 - (1-u)^(1/b), stays positive
    nu = exp(log(inner) / a)
    return clamp(nu, EPS, 1.0 - EPS)


def kumaraswamy_mean(a, b):
    """E[nu] = b * B(1 + 1/a, b)."""
    c = 1.0 + 1.0 / a
    return exp(log(b) + lgamma(c) + lgamma(b) - lgamma(c + b))


def _stick_forward(v):
    k = v.shape[-1]
    ones = np.ones(v.shape[:-1] + (1,))
    if k == 0:
        return ones.copy(), np.ones(v.shape[:-1] + (0,))
    cp = np.cumprod(1.0 - v, axis=-1)
    prefix = np.concatenate([ones, cp[..., :-1]], axis=-1)
    return np.concatenate([v * prefix, cp[..., -1:]], axis=-1), prefix


def stick_break(nu):
    """Stick-breaking map: fractions [..., K-1] -> simplex weights [..., K].

    pi_j = nu_j * prod_{l<j} (1 - nu_l), with the K-th weight the leftover
    stick. Rows sum to one exactly by construction. Implemented as one fused
    op: the backward pass uses the prefix products and a suffix sum instead
    of differentiating through cumprod.
    """
    if not isinstance(nu, Tensor):
        pi, _ = _stick_forward(np.asarray(nu, dtype=np.float64))
        return pi
    pi, prefix = _stick_forward(nu.data)
    out = Tensor(_checked("stick_break", pi))

    def backprop():
        g = out.grad
        gp = g * out.data
        csum = np.cumsum(gp, axis=-1)
        suffix = csum[..., -1:] - csum[..., :-1]
        _accumulate(nu, g[..., :-1] * prefix - suffix / (1.0 - nu.data))

    out._parents = (nu,)
    out._backprop = backprop
    return out


def kl_kumaraswamy_beta(a, b, alpha, n_terms=10):
    """KL( Kumaraswamy(a, b) || Beta(1, alpha) ), elementwise.

    The Beta cross-entropy needs E[log(1 - nu)], which expands into an
    infinite series; `n_terms` truncates it. The default of 10 follows
    common SGVB practice and is what training uses. The tail decays like
    n_terms^(-b), so for reference-quality values (small b especially)
    pass a much larger n_terms; the numpy path is chunked to make that
    affordable.
    """
    psi_term = -np.euler_gamma - digamma(b) - 1.0 / b
    kl = (a - 1.0) / a * psi_term
    kl = kl + log(a * b) - log(alpha)
    kl = kl - (b - 1.0) / b

    if isinstance(a, Tensor) or isinstance(b, Tensor) or isinstance(alpha, Tensor):
        series = 0.0
        lgb = lgamma(b)
        ab = a * b
        for m in range(1, n_terms + 1):
            ma = float(m) / a
            series = series + exp(lgamma(ma) + lgb - lgamma(ma + b)) / (float(m) + ab)
        kl = kl + (alpha - 1.0) * b * series
    else:
        kl = kl + (alpha - 1.0) * b * _beta_series(np.asarray(a, dtype=np.float64),
                                                   np.asarray(b, dtype=np.float64),
                                                   int(n_terms))
    # truncating the series can leave a KL slightly negative; floor it
    return clamp(kl, 0.0, None)


def _beta_series(a, b, n_terms, chunk=1 << 15):
    """sum_{m=1}^{n_terms} B(m/a, b) / (m + a b), vectorized over m in chunks."""
    lgb = _sp.gammaln(b)
    ab = a * b
    total = np.zeros(np.broadcast(a, b).shape)
    m0 = 1
    while m0 <= n_terms:
        m1 = min(n_terms, m0 + chunk - 1)
        m = np.arange(m0, m1 + 1, dtype=np.float64)
        ma = np.multiply.outer(m, 1.0 / a)
        terms = np.exp(_sp.gammaln(ma) + lgb - _sp.gammaln(ma + b))
        terms /= np.add.outer(m, ab)
        total += terms.sum(axis=0)
        m0 = m1 + 1
    return total


def log_pdf_kumaraswamy(x, a, b):
    """log density of Kumaraswamy(a, b) at x, with x clamped away from
    {0, 1} and log(1 - x^a) evaluated as log(-expm1(a log x))."""
    x = clamp(x, EPS, 1.0 - EPS)
    alx = a * log(x)
    return log(a) + log(b) + (a - 1.0) * log(x) + (b - 1.0) * log(-(expm1(alx)))


def log_pdf_beta1(x, alpha):
    """log density of Beta(1, alpha) at x: log alpha + (alpha-1) log(1-x)."""
    x = clamp(x, EPS, 1.0 - EPS)
    return log(alpha) + (alpha - 1.0) * log(1.0 - x)


def gumbel_from_uniform(u):
    """Standard Gumbel noise -log(-log u) from uniforms (numpy only)."""
    u = np.clip(np.asarray(u, dtype=np.float64), EPS, 1.0 - EPS)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, temperature, noise):
    """Concrete relaxation of a categorical: softmax((logits + g) / tau)
    along the last axis. `noise` are standard Gumbels, passed in."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax((logits + noise) / float(temperature), axis=-1)


def kl_gamma(q_shape, q_rate, p_shape, p_rate):
    """KL( Gamma(q_shape, q_rate) || Gamma(p_shape, p_rate) ), with the
    shape/rate parameterization (mean = shape/rate)."""
    kl = (q_shape - p_shape) * digamma(q_shape)
    kl = kl - lgamma(q_shape) + lgamma(p_shape)
    kl = kl + p_shape * (log(q_rate) - log(p_rate))
    kl = kl + q_shape * (p_rate - q_rate) / q_rate
    return kl


def gamma_expectations(shape, rate):
    """(E[alpha], E[log alpha]) under Gamma(shape, rate)."""
    return shape / rate, digamma(shape) - log(rate)


def beta_log_expectations(u, v):
    """(E[log x], E[log(1-x)]) under Beta(u, v)."""
    duv = digamma(u + v)
    return digamma(u) - duv, digamma(v) - duv


def expected_log_weights(u, v):
    """Expected log stick-breaking weights of a truncated Beta posterior.

    u, v are the per-stick Beta parameters, shape [T-1]; returns [T] where
    entry i is E[log pi_i] = E[log x_i] + sum_{l<i} E[log(1-x_l)] and the
    last entry is the leftover stick. numpy only (mean-field side).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    elog_x, elog_1mx = beta_log_expectations(u, v)
    rest = np.concatenate([[0.0], np.cumsum(elog_1mx)])
    return np.concatenate([elog_x, [0.0]]) + rest


def kl_beta(q_u, q_v, p_u, p_v):
    """KL( Beta(q_u, q_v) || Beta(p_u, p_v) ), elementwise."""
    kl = lgamma(p_u) + lgamma(p_v) - lgamma(p_u + p_v)
    kl = kl - (lgamma(q_u) + lgamma(q_v) - lgamma(q_u + q_v))
    kl = kl + (q_u - p_u) * digamma(q_u) + (q_v - p_v) * digamma(q_v)
    kl = kl + (p_u + p_v - q_u - q_v) * digamma(q_u + q_v)
    return kl
