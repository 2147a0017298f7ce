"""Tape-free reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  ``backward`` walks the
graph in reverse topological order.  Only the ops the models need are here.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accum(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _tracks(p):
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    if any(_tracks(p) for p in parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (unbroadcast(g * b.data, a.shape),
                                         unbroadcast(g * a.data, b.shape)))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow for large |x| and a single ufunc pass
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=DTYPE)))


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_np(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _make(a.data * m, (a,), lambda g: (g * m,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * sigmoid_np(x),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "linear": lambda t: t,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, parts, bw)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        bt = np.swapaxes(b.data, -1, -2)
        ga = g @ bt
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------------

def masked_softmax(scores: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` ignoring positions where ``mask`` is 0.

    A row with no valid position yields all-zero weights.
    """
    x = scores.data
    if mask is None:
        mask = np.ones_like(x, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    shifted = np.where(mask, x, -np.inf)
    mx = np.max(shifted, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x - mx, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    p = e / np.where(denom > 0, denom, 1.0)

    def bw(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (scores,), bw)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup; index 0 is padding and returns the zero vector, no gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError("embedding index out of range")
    valid = idx != 0
    out = table.data[idx] * valid[..., None]

    def bw(g):
        full = np.zeros_like(table.data)
        flat_idx = idx[valid]
        if flat_idx.size:
            rows = g[valid]
            order = np.argsort(flat_idx, kind="stable")
            flat_idx, rows = flat_idx[order], rows[order]
            uniq, start = np.unique(flat_idx, return_index=True)
            full[uniq] = np.add.reduceat(rows, start, axis=0)
        return (full,)

    return _make(out, (table,), bw)


def stack_rows(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)
    return _make(out, parts, lambda g: tuple(np.moveaxis(g, axis, 0)))
