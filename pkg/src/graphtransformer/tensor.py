"""A small dense tensor type with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` context are recorded when
at least one input is tracked (a leaf with ``requires_grad`` or the output of
a recorded op).  Outside any tape nothing is recorded, which is how inference
runs.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(mul(x, x))
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "TensorError",
    "abs_",
    "affine_standardize",
    "add",
    "backward",
    "clamp",
    "concat",
    "exp",
    "gather",
    "grad_check",
    "linear",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "scalar_mul",
    "segment_mean",
    "segment_softmax",
    "segment_sum",
    "standardize",
    "sub",
    "sum_",
]


class TensorError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if type(x) is Tensor else Tensor(x)


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered log of executed primitives; used as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_new_tensor = object.__new__


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, grad_fn: Callable) -> Tensor:
    # Inputs are float64 Tensors, so results are float64 too; only 0-d
    # results can come back as numpy scalars.  Building the Tensor by hand
    # skips the conversion in __init__, which dominates on small inputs.
    out = _new_tensor(Tensor)
    out.data = out_data if type(out_data) is np.ndarray else np.asarray(out_data, dtype=np.float64)
    out.requires_grad = out._tracked = False
    out.grad = out.name = None
    if _ACTIVE:
        for t in inputs:
            if t._tracked:
                out._tracked = True
                _ACTIVE[-1].records.append(_Record(op, tuple(inputs), out, grad_fn))
                break
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every ``requires_grad`` tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays; call ``zero_grad``
    between steps.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if loss.requires_grad:
        leaves[id(loss)] = loss
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t._tracked:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t.requires_grad:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise TensorError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("add", (a, b), _binary("add", np.add, a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("sub", (a, b), _binary("sub", np.subtract, a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product."""
    a, b = as_tensor(a), as_tensor(b)
    return _record("mul", (a, b), _binary("mul", np.multiply, a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scalar_mul", (a,), a.data * c, lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record("matmul", (a, b), a.data @ b.data,
                   lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b) -> Tensor:
    """Fused affine map ``x @ w + b`` for 2-D ``x`` and ``w`` and a 1-D bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xs, ws = x.data.shape, w.data.shape
    if len(xs) != 2 or len(ws) != 2 or xs[1] != ws[0] or b.data.shape != (ws[1],):
        raise TensorError(f"linear: incompatible shapes {x.shape}, {w.shape} and {b.shape}")
    return _record("linear", (x, w, b), x.data @ w.data + b.data,
                   lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", ts, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise TensorError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", (a,), a.data * mask, lambda g: (g * mask,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is 1 strictly inside, 0 elsewhere."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    out = np.minimum(np.maximum(a.data, lo), hi)
    return _record("clamp", (a,), out, lambda g: (g * inside,))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, grad)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def gather(a, index) -> Tensor:
    """Rows ``a[index]``; repeated indices accumulate in the backward pass."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    try:
        out = a.data[index]
    except IndexError:
        raise TensorError(f"gather: index out of range for {a.shape[0]} rows") from None
    if index.size and index.min() < 0:
        raise TensorError("gather: negative index")

    def grad(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _record("gather", (a,), out, grad)


def _check_segments(op: str, a: Tensor, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (a.shape[0],):
        raise TensorError(f"{op}: need one segment id per row, got {segment_ids.shape} for {a.shape}")
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise TensorError(f"{op}: segment id out of range for {num_segments} segments")
    return segment_ids


def _segment_sum(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, seg, x)
    return out


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    a = as_tensor(a)
    seg = _check_segments("segment_sum", a, segment_ids, num_segments)
    return _record("segment_sum", (a,), _segment_sum(a.data, seg, num_segments),
                   lambda g: (g[seg],))


def segment_mean(a, segment_ids, num_segments: int) -> Tensor:
    """Mean of rows per segment; empty segments give zeros."""
    a = as_tensor(a)
    seg = _check_segments("segment_mean", a, segment_ids, num_segments)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    scale = (1.0 / np.maximum(counts, 1.0)).reshape((-1,) + (1,) * (a.ndim - 1))
    out = _segment_sum(a.data, seg, num_segments) * scale
    return _record("segment_mean", (a,), out, lambda g: ((g * scale)[seg],))


def segment_softmax(a, segment_ids, num_segments: int) -> Tensor:
    """Softmax over the rows sharing a segment id, independently per column."""
    a = as_tensor(a)
    seg = _check_segments("segment_softmax", a, segment_ids, num_segments)
    top = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(top, seg, a.data)
    e = np.exp(a.data - top[seg])
    y = e / _segment_sum(e, seg, num_segments)[seg]

    def grad(g):
        return (y * (g - _segment_sum(g * y, seg, num_segments)[seg]),)

    return _record("segment_softmax", (a,), y, grad)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return _record("log_softmax", (a,), out,
                   lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def _moments(x: np.ndarray, axis: int):
    scale = 1.0 / x.shape[axis]
    mu = x.sum(axis=axis, keepdims=True) * scale
    xc = x - mu
    return mu, xc, (xc * xc).sum(axis=axis, keepdims=True) * scale


def standardize(a, axis: int, eps: float = 1e-5) -> Tensor:
    """``(x - mean) / sqrt(var + eps)`` along ``axis`` (population variance)."""
    a = as_tensor(a)
    return affine_standardize(a, None, None, axis, eps)[0]


def affine_standardize(a, gamma, beta, axis: int, eps: float = 1e-5):
    """Fused ``standardize(a) * gamma + beta``; also returns the batch mean and variance.

    ``gamma`` and ``beta`` are 1-D over the non-reduced axis of a 2-D input,
    or both ``None`` for the bare standardization.
    """
    a = as_tensor(a)
    mu, xc, var = _moments(a.data, axis)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    n = a.data.shape[axis]

    def grad_y(g):
        gm = g.sum(axis=axis, keepdims=True) / n
        gym = (g * y).sum(axis=axis, keepdims=True) / n
        return inv * (g - gm - y * gym)

    if gamma is None:
        out = _record("standardize", (a,), y, lambda g: (grad_y(g),))
    else:
        gamma, beta = as_tensor(gamma), as_tensor(beta)
        if gamma.data.shape != (a.data.shape[1],) or beta.data.shape != gamma.data.shape:
            raise TensorError(f"affine_standardize: scale/shift shapes {gamma.shape}, {beta.shape} "
                              f"do not match input {a.shape}")
        out = _record("affine_standardize", (a, gamma, beta), y * gamma.data + beta.data,
                      lambda g: (grad_y(g * gamma.data), (g * y).sum(axis=0), g.sum(axis=0)))
    return out, mu.reshape(-1), var.reshape(-1)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               kinks: Sequence[float] = (0.0,), margin: Optional[float] = None) -> float:
    """Largest relative disagreement between tape and central-difference gradients.

    Coordinates of ``x`` lying within ``margin`` (default ``10 * eps``) of a
    non-differentiable point listed in ``kinks`` are first pushed just outside
    that band.  The relative error per coordinate is
    ``|a - b| / max(1e-8, |a| + |b|)``.
    """
    margin = 10 * eps if margin is None else margin
    data = x.data.copy()
    for k in kinks:
        near = np.abs(data - k) < margin
        data[near] = k + np.where(data[near] >= k, margin, -margin)
    x.data = data

    saved_flag, saved_grad = x.requires_grad, x.grad
    x.requires_grad = x._tracked = True
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = np.zeros_like(data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)

    x.requires_grad = x._tracked = saved_flag
    x.grad = saved_grad
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if data.size else 0.0
