"""Minimal reverse-mode tensor engine on numpy.

Forward ops run eagerly; when a :class:`Tape` is active each op appends a
backward closure to it.  ``backward(tape, loss)`` walks the recorded list once
in reverse (the record order is a topological order by construction) and
accumulates gradients into ``Tensor.grad`` slots.  With no active tape the
same ops run gradient-free, which is how rollouts are collected.

Arrays default to 64-bit floats; ``set_default_dtype`` switches the precision
used for newly created tensors (tests pin 64-bit, training may drop to 32).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Wengert list: one (output, backward closure) record per executed op."""

    def __init__(self) -> None:
        self.ops: list[tuple[Tensor, object]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        assert _TAPE_STACK and _TAPE_STACK[-1] is self
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.ops)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        elif dtype is not None:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    # -- plumbing ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def constant(x) -> Tensor:
    return _wrap(x)


def _record(out: Tensor, backward_fn) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.ops.append((out, backward_fn))


def backward(tape: Tape, loss: Tensor) -> None:
    """Seed the scalar loss with gradient one and replay the tape in reverse."""
    if loss.data.shape != ():
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if tape.consumed:
        raise RuntimeError("tape already replayed; record a fresh tape")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.ops):
        if out.grad is not None:
            fn(out.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    _record(out, back)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    _record(out, back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    _record(out, back)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, back)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=a.requires_grad)

    def back(g):
        a.accumulate(-g)

    _record(out, back)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    _record(out, back)
    return out


def spmm(a_csr: sp.csr_matrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times dense tensor."""
    out = Tensor(np.asarray(a_csr @ x.data), requires_grad=x.requires_grad)
    at = a_csr.T.tocsr()

    def back(g):
        x.accumulate(np.asarray(at @ g))

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# pointwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * mask)

    _record(out, back)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, slope * x.data), requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * np.where(mask, 1.0, slope))

    _record(out, back)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), requires_grad=x.requires_grad)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
        x.accumulate(g * local)

    _record(out, back)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * y * (1.0 - y))

    _record(out, back)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * (1.0 - y * y))

    _record(out, back)
    return out


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * y)

    _record(out, back)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g / x.data)

    _record(out, back)
    return out


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = Tensor(y, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * 0.5 / y)

    _record(out, back)
    return out


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * 2.0 * x.data)

    _record(out, back)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi), requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g * inside)

    _record(out, back)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), requires_grad=x.requires_grad)

    def back(g):
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(gg, x.data.shape).copy())

    _record(out, back)
    return out


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    denom = x.data.size if axis is None else x.data.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / denom)


def rowmax_const(x: Tensor, axis=-1, keepdims: bool = True) -> Tensor:
    """Detached maximum, used to shift softmax logits (gradient-free)."""
    return Tensor(x.data.max(axis=axis, keepdims=keepdims))


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g.reshape(x.data.shape))

    _record(out, back)
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g.T)

    _record(out, back)
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        requires_grad=any(p.requires_grad for p in parts),
    )
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p.accumulate(piece)

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# indexing


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], requires_grad=x.requires_grad)

    def back(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx, g)
        x.accumulate(buf)

    _record(out, back)
    return out


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Lookup rows (or scalars) of ``table`` at integer indices of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def back(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx.reshape(-1), g.reshape((-1,) + table.data.shape[1:]))
        table.accumulate(buf)

    _record(out, back)
    return out


def segment_sum(x: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    shape = (n_segments,) + x.data.shape[1:]
    data = np.zeros(shape, dtype=x.data.dtype)
    np.add.at(data, seg, x.data)
    out = Tensor(data, requires_grad=x.requires_grad)

    def back(g):
        x.accumulate(g[seg])

    _record(out, back)
    return out
