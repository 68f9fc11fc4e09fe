"""Differentiable primitives.

Binary elementwise primitives accept equal shapes, a scalar operand, or
leading-batch broadcast (one shape is a trailing suffix of the other, e.g. a
bias of shape ``(H,)`` against ``(N, H)``). Nothing else broadcasts.
Reductions that act "along the last axis" keep every leading axis.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import DimensionError, DomainError
from .tensor import Tensor

NORM_EPS = 1e-12


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64))


def _record(op, out, inputs, backward):
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise DimensionError(f"{op}: operands recorded on different tapes")
    if tape is None:
        return Tensor(out)
    return tape.push(op, out, tuple(t.node for t in inputs), backward)


def _broadcast_check(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _record("subtract", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("multiply", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("multiply", ad * bd, (a, b), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0  # derivative at exactly 0 is 0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError(f"log: non-positive input (min {x.data.min()!r})")
    xd = x.data
    return _record("log", np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError(f"sqrt: non-positive input (min {x.data.min()!r})")
    out = np.sqrt(x.data)
    return _record("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient flows only strictly inside the interval."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _record("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def detach(x) -> Tensor:
    """Value of ``x`` as a constant: no gradient flows back through it."""
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``(n, k) @ (k, m)`` or ``(k,) @ (k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T
        gb = np.outer(ad, g) if ad.ndim == 1 else ad.T @ g
        return ga, gb

    return _record("matmul", ad @ bd, (a, b), bw)


# ---------------------------------------------------------------- reductions & shape


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.asarray(x.data.sum(axis=axes)), (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([shape[a] for a in axes]))

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record("mean", np.asarray(x.data.mean(axis=axes)), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _record("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _record("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx) -> Tensor:
    """Indexing (the ``slice`` primitive); integer-array indices are allowed."""
    x = as_tensor(x)
    shape = x.shape
    try:
        out = x.data[idx]
    except IndexError as e:
        raise DimensionError(f"slice: {e} for shape {shape}") from None
    basic = _is_basic_index(idx)

    def bw(g):
        gx = np.zeros(shape)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _record("slice", np.array(out, dtype=np.float64), (x,), bw)


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat: no inputs")
    ndim = xs[0].ndim
    ax = axis % ndim if ndim else 0
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return _record("concat", np.concatenate([x.data for x in xs], axis=ax), tuple(xs),
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


def stack(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("stack: no inputs")
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise DimensionError(f"stack: incompatible shapes {xs[0].shape} and {x.shape}")
    n = len(xs)
    ax = axis % (xs[0].ndim + 1)

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(n))

    return _record("stack", np.stack([x.data for x in xs], axis=ax), tuple(xs), bw)


# ---------------------------------------------------------------- last-axis ops


def l2_normalize(x) -> Tensor:
    """Rows of ``x`` divided by ``norm + 1e-12``. Zero rows are a domain error."""
    x = as_tensor(x)
    xd = x.data
    if xd.ndim == 0:
        raise DimensionError("l2_normalize: needs at least one axis, got shape ()")
    n = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    if np.any(n == 0.0):
        raise DomainError("l2_normalize: zero-norm input")
    s = n + NORM_EPS
    out = xd / s

    def bw(g):
        dot = (xd * g).sum(axis=-1, keepdims=True)
        return (g / s - xd * dot / (s * s * n),)

    return _record("l2_normalize", out, (x,), bw)


def _log_norm(xd):
    """Shift and log-normalizer ``max + log1p(sum of the non-max terms)``.

    Using log1p keeps terms far below the maximum (a saturated softmax) from
    rounding away.
    """
    mx = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - mx)
    rest = e.copy()
    np.put_along_axis(rest, xd.argmax(axis=-1)[..., None], 0.0, axis=-1)
    return mx, e, np.log1p(rest.sum(axis=-1, keepdims=True))


def logsumexp(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if xd.ndim == 0:
        raise DimensionError("logsumexp: needs at least one axis, got shape ()")
    mx, e, lz = _log_norm(xd)
    out = (mx + lz)[..., 0]
    soft = e / np.exp(lz)
    return _record("logsumexp", out, (x,), lambda g: (g[..., None] * soft,))


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if xd.ndim == 0:
        raise DimensionError("log_softmax: needs at least one axis, got shape ()")
    mx, _, lz = _log_norm(xd)
    out = xd - mx - lz
    soft = np.exp(out)
    return _record("log_softmax", out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def softplus(x) -> Tensor:
    """``log(1 + e^x)`` built from stack + logsumexp (stable for large ``x``)."""
    x = as_tensor(x)
    return logsumexp(stack([Tensor(np.zeros(x.shape)), x], axis=-1))


# ---------------------------------------------------------------- kernel-backed


def maxpool2x2(x) -> Tensor:
    """Ceil-mode 2x2 max-pool over the first two axes of a ``(T, D, C)`` tensor."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"maxpool2x2: expected (T, D, C), got {x.shape}")
    T, D, _ = x.shape
    out, idx = _kernels.maxpool2x2_forward(np.ascontiguousarray(x.data))

    def bw(g):
        return (_kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx, T, D),)

    return _record("maxpool2x2", out, (x,), bw)


def ctc_nll(log_probs, labels, blank: int) -> Tensor:
    """Negative log CTC likelihood of ``labels`` under framewise ``log_probs``."""
    log_probs = as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise DimensionError(f"ctc_nll: expected (T', V) log-probs, got {log_probs.shape}")
    lab = np.ascontiguousarray(labels, dtype=np.int64)
    nll, grad = _kernels.ctc_forward_backward(np.ascontiguousarray(log_probs.data), lab, int(blank))
    return _record("ctc_nll", np.asarray(nll), (log_probs,), lambda g: (g * grad,))
