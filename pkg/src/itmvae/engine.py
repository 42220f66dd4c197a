"""Minimal dense-tensor engine with reverse-mode gradients.

Everything is float64. A `Tensor` wraps a numpy array plus the tape entry
needed for backprop; `Parameter` is a named leaf whose gradient accumulates
across backward passes until explicitly zeroed. The functional ops below
(`exp`, `log`, `softmax`, ...) dispatch on input type: given a `Tensor` they
extend the graph, given plain arrays/scalars they evaluate with numpy. This
lets the same formula serve both the differentiable training path and plain
numeric evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp

__all__ = [
    "EngineError", "Tensor", "Parameter", "BatchNormState",
    "backward", "affine", "matmul", "reshape", "take_rows", "tsum", "tmean",
    "exp", "log", "log1p", "expm1", "sqrt", "clamp",
    "softplus", "sigmoid", "softmax", "log_softmax", "digamma", "lgamma",
    "batch_norm", "grad_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint",
]


class EngineError(ValueError):
    """Shape mismatch or non-finite value inside the compute graph."""


# When on, every op validates its output; the cost is small at desk scale
# and it catches blowups at the op that produced them.
check_finite = True


def _asarray(x):
    return np.asarray(x, dtype=np.float64)


def _checked(name, arr):
    if check_finite and not np.all(np.isfinite(arr)):
        raise EngineError(f"non-finite values produced by '{name}'")
    return arr


class Tensor:
    """Array node in the reverse-mode tape."""

    __slots__ = ("data", "grad", "_parents", "_backprop")

    # make `ndarray <op> Tensor` defer to our reflected operators instead of
    # numpy broadcasting over a foreign object
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backprop=None):
        self.data = _asarray(data)
        self.grad = None
        self._parents = tuple(parents)
        self._backprop = backprop

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return _binary("add", self, other, lambda a, b: a + b,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __mul__(self, other):
        return _binary("mul", self, other, lambda a, b: a * b,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __sub__(self, other):
        return _binary("sub", self, other, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary("rsub", other, self, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __truediv__(self, other):
        return _binary("div", self, other, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        return _binary("rdiv", other, self, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __neg__(self):
        return _unary("neg", self, lambda a: -a, lambda g, a, out: -g)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise EngineError("tensor exponents are unsupported; use exp/log")
        c = float(exponent)
        return _unary(f"pow{c}", self, lambda a: a ** c,
                      lambda g, a, out: g * c * a ** (c - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named trainable leaf; `.grad` accumulates until `zero_grad`."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(node, grad):
    g = _unbroadcast(_asarray(grad), node.shape)
    if node.grad is None:
        node.grad = np.zeros(node.shape, dtype=np.float64)
    node.grad += g


def _unary(name, x, fwd, bwd):
    if not isinstance(x, Tensor):
        return fwd(_asarray(x))
    out_data = _checked(name, fwd(x.data))
    out = Tensor(out_data)

    def backprop():
        _accumulate(x, bwd(out.grad, x.data, out.data))

    out._parents = (x,)
    out._backprop = backprop
    return out


def _binary(name, x, y, fwd, bwd_x, bwd_y):
    if not isinstance(x, Tensor) and not isinstance(y, Tensor):
        return fwd(_asarray(x), _asarray(y))
    xt = x if isinstance(x, Tensor) else Tensor(x)
    yt = y if isinstance(y, Tensor) else Tensor(y)
    out = Tensor(_checked(name, fwd(xt.data, yt.data)))

    def backprop():
        _accumulate(xt, bwd_x(out.grad, xt.data, yt.data))
        _accumulate(yt, bwd_y(out.grad, xt.data, yt.data))

    out._parents = (xt, yt)
    out._backprop = backprop
    return out


def backward(root):
    """Run one reverse pass from a scalar `root`.

    Build a fresh graph per pass; intermediate grads are not reset between
    passes, only Parameters are meant to accumulate across them.
    """
    if root.size != 1:
        raise EngineError(f"backward root must be scalar, got shape {root.shape}")
    topo, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    if root.grad is None:
        root.grad = np.zeros(root.shape, dtype=np.float64)
    root.grad += np.ones(root.shape)
    for node in reversed(topo):
        if node._backprop is not None:
            node._backprop()


# -- elementwise ops --------------------------------------------------------

def exp(x):
    return _unary("exp", x, np.exp, lambda g, a, out: g * out)


def log(x):
    return _unary("log", x, np.log, lambda g, a, out: g / a)


def log1p(x):
    return _unary("log1p", x, np.log1p, lambda g, a, out: g / (1.0 + a))


def expm1(x):
    return _unary("expm1", x, np.expm1, lambda g, a, out: g * (out + 1.0))


def sqrt(x):
    return _unary("sqrt", x, np.sqrt, lambda g, a, out: g * 0.5 / out)


def sigmoid(x):
    return _unary("sigmoid", x, _sp.expit, lambda g, a, out: g * out * (1.0 - out))


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    return _unary("softplus", x, lambda a: np.logaddexp(0.0, a),
                  lambda g, a, out: g * _sp.expit(a))


def digamma(x):
    return _unary("digamma", x, _sp.digamma,
                  lambda g, a, out: g * _sp.polygamma(1, a))


def lgamma(x):
    return _unary("lgamma", x, _sp.gammaln, lambda g, a, out: g * _sp.digamma(a))


def clamp(x, lo=None, hi=None):
    """Clip into [lo, hi]; gradient is zero where the clip is active."""

    def fwd(a):
        return np.clip(a, lo, hi)

    def bwd(g, a, out):
        mask = np.ones_like(a)
        if lo is not None:
            mask = mask * (a >= lo)
        if hi is not None:
            mask = mask * (a <= hi)
        return g * mask

    return _unary("clamp", x, fwd, bwd)


# -- reductions / shape -----------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(_asarray(x), axis=axis, keepdims=keepdims)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))

    def backprop():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    out._parents = (x,)
    out._backprop = backprop
    return out


def tmean(x, axis=None, keepdims=False):
    n = np.prod([_asarray(x).shape[a] for a in np.atleast_1d(axis)]) if axis is not None \
        else (x.size if isinstance(x, Tensor) else _asarray(x).size)
    return tsum(x, axis=axis, keepdims=keepdims) / float(n)


def take_rows(x, n):
    """First n rows of a matrix; gradient zero-fills the dropped rows."""
    if not isinstance(x, Tensor):
        return _asarray(x)[:n]
    out = Tensor(x.data[:n])

    def backprop():
        g = np.zeros(x.shape, dtype=np.float64)
        g[:n] = out.grad
        _accumulate(x, g)

    out._parents = (x,)
    out._backprop = backprop
    return out


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return _asarray(x).reshape(shape)
    out = Tensor(x.data.reshape(shape))

    def backprop():
        _accumulate(x, out.grad.reshape(x.shape))

    out._parents = (x,)
    out._backprop = backprop
    return out


def matmul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return _asarray(a) @ _asarray(b)
    at = a if isinstance(a, Tensor) else Tensor(a)
    bt = b if isinstance(b, Tensor) else Tensor(b)
    if at.ndim != 2 or bt.ndim != 2 or at.shape[1] != bt.shape[0]:
        raise EngineError(f"matmul shape mismatch: {at.shape} @ {bt.shape}")
    out = Tensor(_checked("matmul", at.data @ bt.data))

    def backprop():
        _accumulate(at, out.grad @ bt.data.T)
        _accumulate(bt, at.data.T @ out.grad)

    out._parents = (at, bt)
    out._backprop = backprop
    return out


def affine(x, weight, bias):
    """y = x @ weight + bias for x [B, I], weight [I, O], bias [O]."""
    xs = x.shape if isinstance(x, Tensor) else _asarray(x).shape
    ws = weight.shape if isinstance(weight, Tensor) else _asarray(weight).shape
    if len(xs) != 2 or len(ws) != 2 or xs[1] != ws[0]:
        raise EngineError(f"affine shape mismatch: x {tuple(xs)} vs weight {tuple(ws)}")
    return matmul(x, weight) + bias


# -- fused normalizers ------------------------------------------------------

def softmax(x, axis=-1):
    """Row-stable softmax (max subtraction)."""

    def fwd(a):
        z = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(z)
        return e / np.sum(e, axis=axis, keepdims=True)

    if not isinstance(x, Tensor):
        return fwd(_asarray(x))
    out = Tensor(_checked("softmax", fwd(x.data)))

    def backprop():
        g, y = out.grad, out.data
        _accumulate(x, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    out._parents = (x,)
    out._backprop = backprop
    return out


def log_softmax(x, axis=-1):
    def fwd(a):
        z = a - np.max(a, axis=axis, keepdims=True)
        return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))

    if not isinstance(x, Tensor):
        return fwd(_asarray(x))
    out = Tensor(_checked("log_softmax", fwd(x.data)))

    def backprop():
        g = out.grad
        _accumulate(x, g - np.exp(out.data) * np.sum(g, axis=axis, keepdims=True))

    out._parents = (x,)
    out._backprop = backprop
    return out


class BatchNormState:
    """Scale/shift parameters plus running statistics for one feature axis."""

    def __init__(self, width, momentum=0.1, eps=1e-5, name="bn"):
        if not 0.0 < momentum < 1.0:
            raise EngineError(f"batch-norm momentum must be in (0,1), got {momentum}")
        self.scale = Parameter(np.ones(width), name=f"{name}.scale")
        self.shift = Parameter(np.zeros(width), name=f"{name}.shift")
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def parameters(self):
        return [self.scale, self.shift]

    def state_arrays(self, prefix):
        return {f"{prefix}.running_mean": self.running_mean,
                f"{prefix}.running_var": self.running_var}


def batch_norm(x, state, training):
    """Normalize features of x [B, F]; batch statistics while training,
    running statistics otherwise. Training mode updates the running stats
    in place (momentum = fraction of the new batch statistic)."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if training:
        mu = xt.data.mean(axis=0)
        var = xt.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (xt.data - mu) * inv_std
    out = Tensor(_checked("batch_norm", state.scale.data * xhat + state.shift.data))

    def backprop():
        g = out.grad
        _accumulate(state.shift, g.sum(axis=0))
        _accumulate(state.scale, (g * xhat).sum(axis=0))
        dxhat = g * state.scale.data
        if training:
            n = xt.shape[0]
            dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                  - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        _accumulate(xt, dx)

    out._parents = (xt, state.scale, state.shift)
    out._backprop = backprop
    return out


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def failures(self):
        return {k: v for k, v in self.per_param.items() if v >= self.tol}

    @property
    def ok(self):
        return not self.failures

    def __str__(self):
        lines = [f"grad_check tol={self.tol:g} max_err={self.max_error:.3e}"]
        for name, err in sorted(self.per_param.items(), key=lambda kv: -kv[1]):
            mark = "FAIL" if err >= self.tol else "ok"
            lines.append(f"  {mark:4s} {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(f, params, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of the scalar computation `f()`
    against central finite differences, coordinate by coordinate.

    `f` must be deterministic given the current parameter values (fix all
    sampling noise before calling). Returns the max relative error per
    parameter; relative error uses max(|fd|, |ad|, 1e-8) as denominator.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    report = GradCheckReport(tol=tol)
    for p in params:
        an = analytic[p.name]
        worst = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            ad = an.reshape(-1)[i]
            err = abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)
            worst = max(worst, err)
        report.per_param[p.name] = worst
    return report


# -- checkpoint io ----------------------------------------------------------

def save_checkpoint(path, arrays, meta=None):
    """One JSON header line (names, shapes, metadata) followed by the raw
    little-endian float64 arrays in header order."""
    header = {
        "meta": dict(meta or {}),
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays: dict[name -> ndarray], meta: dict)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise EngineError(f"checkpoint truncated at array '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise EngineError("trailing bytes after last checkpoint array")
    return arrays, header.get("meta", {})
