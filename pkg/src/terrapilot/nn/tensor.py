"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps a C-contiguous (row-major) ndarray together with
an optional gradient and the closure needed to push gradients to its
parents.  The op set is exactly what the pipeline needs: broadcasting
arithmetic, (batched) matmul, slicing/concat, reductions, the usual
activations, and a masked softmax primitive with an exact-zero guarantee
on masked entries.

Everything is deterministic: no op draws randomness, and backward walks a
topological order that is a pure function of graph construction order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DegenerateMaskError, DimensionError

_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Globally toggle per-op finiteness asserts (slow; used by tests)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim:
            # ascontiguousarray would promote 0-d arrays to shape (1,),
            # which breaks float()/item() on scalar losses under NumPy >= 1.25.
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite values produced by an operation")

    # -- basic protocol -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, "
                                 f"got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # -- autodiff machinery ---------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (scalar unless ``seed`` given)."""
        if seed is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def matmul(a, b) -> Tensor:
    """numpy-matmul semantics for operands with ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


# -- shape ops ---------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out_data = np.ascontiguousarray(np.swapaxes(x.data, a1, a2))

    def backward(g):
        x._accumulate(np.swapaxes(g, a1, a2))

    return Tensor(out_data, parents=(x,), backward=backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice))
               for p in parts)


def take(x, idx) -> Tensor:
    """Slicing / integer indexing with scatter-add backward."""
    x = as_tensor(x)
    out_data = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        x._accumulate(gx)

    return Tensor(np.ascontiguousarray(out_data), parents=(x,), backward=backward)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            if p.requires_grad:
                p._accumulate(g[tuple(sl)])
            offset += size

    return Tensor(out_data, parents=tuple(parts), backward=backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(np.take(g, i, axis=axis))

    return Tensor(out_data, parents=tuple(parts), backward=backward)


# -- reductions ---------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            gx = np.broadcast_to(g, x.shape)
        else:
            g_ = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(g_, x.shape)
        x._accumulate(gx.astype(x.dtype, copy=False))

    return Tensor(out_data, parents=(x,), backward=backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.shape[a] for a in axis]))
    else:
        n = x.shape[axis]
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


# -- nonlinearities -----------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return Tensor(out_data, parents=(x,), backward=backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out_data = 1.0 / (1.0 + np.exp(-np.abs(x.data)))
    out_data = np.where(x.data >= 0, out_data, 1.0 - out_data)

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return Tensor(out_data, parents=(x,), backward=backward)


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient is zero where the floor engaged."""
    x = as_tensor(x)
    out_data = np.maximum(x.data, floor)

    def backward(g):
        x._accumulate(g * (x.data > floor))

    return Tensor(out_data, parents=(x,), backward=backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return Tensor(out_data, parents=(x,), backward=backward)


def masked_softmax(scores, mask: np.ndarray, axis: int = -1,
                   allow_empty: bool = False) -> Tensor:
    """Softmax over entries where ``mask`` is 1; masked entries are exactly 0.

    ``mask`` is a constant 0/1 array broadcastable to ``scores``.  Rows with
    no unmasked entry raise :class:`DegenerateMaskError` unless
    ``allow_empty`` is set, in which case they come out all-zero (used for
    empty routing branches).
    """
    scores = as_tensor(scores)
    m = np.broadcast_to(np.asarray(mask, dtype=scores.dtype), scores.shape)
    counts = m.sum(axis=axis, keepdims=True)
    if not allow_empty and np.any(counts == 0):
        raise DegenerateMaskError("attention mask selects zero key/value rows")
    neg = np.where(m > 0, scores.data, -np.inf)
    shift = neg.max(axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(neg - shift) * m
    z = e.sum(axis=axis, keepdims=True)
    z_safe = np.where(z == 0, 1.0, z)
    out_data = e / z_safe

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        scores._accumulate(out_data * (g - dot))

    return Tensor(out_data, parents=(scores,), backward=backward)
