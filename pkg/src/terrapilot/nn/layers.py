"""Named-parameter store and the layer zoo used across the pipeline.

Layers are pure functions of (store, name, inputs): parameters live in a
:class:`ParamStore` under dotted names, which is what makes checkpointing,
freezing-by-predicate, and finite-difference checking straightforward.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Iterable

import numpy as np

from ..errors import DimensionError, InvariantViolation
from . import tensor as T
from .tensor import Tensor

PROB_FLOOR = 1e-12


class ParamStore:
    """Mapping name -> parameter Tensor, plus trainability flags.

    Gradients accumulate on the tensors themselves; Adam moments are kept
    here so they survive across steps (single-writer access assumed).
    """

    def __init__(self, dtype: str = "float64"):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self.opt_state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.opt_step = 0

    # -- creation / access -------------------------------------------------

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise InvariantViolation(f"duplicate parameter name {name!r}")
        arr = np.asarray(value)
        if arr.dtype.kind != "f":
            arr = arr.astype(self.dtype)
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def create(self, name: str, shape: tuple[int, ...], init: str,
               rng: np.random.Generator, gain: float = 1.0) -> Tensor:
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "normal":
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            value = rng.normal(0.0, gain / math.sqrt(fan_in), size=shape)
        elif init == "embedding":
            # Unit-variance rows for learnable query/token embeddings, which
            # keeps attention logits diverse at init (fan-in scaling would
            # collapse softmax weights toward uniform).
            value = rng.normal(0.0, gain, size=shape)
        elif init == "uniform":
            value = rng.uniform(-gain, gain, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        return self.add(name, value.astype(self.dtype))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # -- training plumbing ---------------------------------------------------

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def set_trainable(self, predicate: Callable[[str], bool]) -> None:
        for name in self._params:
            self._trainable[name] = bool(predicate(name))

    def trainable_names(self) -> list[str]:
        return [n for n, flag in self._trainable.items() if flag]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def checksum(self, name: str | None = None) -> str:
        """sha256 over raw little-endian bytes (one tensor or the whole store)."""
        h = hashlib.sha256()
        names = [name] if name is not None else sorted(self._params)
        for n in names:
            arr = np.ascontiguousarray(self._params[n].data)
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            h.update(n.encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def freeze(store: ParamStore, predicate: Callable[[str], bool]) -> list[str]:
    """Mark parameters matching ``predicate`` frozen; returns frozen names.

    Frozen parameters receive zero optimizer updates; callers verify with
    :meth:`ParamStore.checksum` before/after.
    """
    frozen = []
    for name in store.names():
        if predicate(name):
            store._trainable[name] = False
            frozen.append(name)
    return frozen


# -- layers -------------------------------------------------------------------


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    """Affine map ``x @ W + b`` with parameters ``name.w`` / ``name.b``."""
    w = store[f"{name}.w"]
    b = store[f"{name}.b"]
    x = T.as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"linear {name!r}: input shape {x.shape} does not match weight shape {w.shape}")
    return T.add(T.matmul(x, w), b)


def init_linear(store: ParamStore, name: str, d_in: int, d_out: int,
                rng: np.random.Generator, gain: float = 1.0) -> None:
    store.create(f"{name}.w", (d_in, d_out), "normal", rng, gain=gain)
    store.create(f"{name}.b", (d_out,), "zeros", rng)


def mlp2(store: ParamStore, name: str, x: Tensor) -> Tensor:
    """Two affine layers with a ReLU between (``name.fc1`` / ``name.fc2``)."""
    return linear(store, f"{name}.fc2", T.relu(linear(store, f"{name}.fc1", x)))


def init_mlp2(store: ParamStore, name: str, d_in: int, hidden: int, d_out: int,
              rng: np.random.Generator) -> None:
    init_linear(store, f"{name}.fc1", d_in, hidden, rng)
    init_linear(store, f"{name}.fc2", hidden, d_out, rng)


def masked_cross_attention(store: ParamStore, name: str, q: Tensor, kv: Tensor,
                           mask: np.ndarray | None = None, n_heads: int = 1,
                           allow_empty: bool = False) -> Tensor:
    """Scaled dot-product cross-attention of ``q`` rows over ``kv`` rows.

    Projections ``name.{wq,wk,wv}`` (with biases) map queries and keys/values
    into a shared width; with a single head the output of a one-candidate
    row is exactly that row's value projection.  ``mask`` is a constant 0/1
    array, either a vector over kv rows or broadcastable to the score shape
    (..., n_q, n_kv); masked rows get exactly zero attention weight.
    """
    q = T.as_tensor(q)
    kv = T.as_tensor(kv)
    wk = store[f"{name}.wk.w"]
    if kv.shape[-1] != wk.shape[0]:
        raise DimensionError(
            f"attention {name!r}: kv shape {kv.shape} does not match key weight {wk.shape}")
    qh = linear(store, f"{name}.wq", q)
    # The key projection carries no bias: softmax is shift-invariant per
    # query row, so a key bias is exactly a no-op parameter.
    kh = T.matmul(kv, wk)
    vh = linear(store, f"{name}.wv", kv)
    d_model = qh.shape[-1]
    if d_model % n_heads != 0:
        raise DimensionError(f"attention width {d_model} not divisible by {n_heads} heads")
    d_head = d_model // n_heads

    mask_arr = None
    if mask is not None:
        mask_arr = np.asarray(mask)
        if mask_arr.ndim == 1:
            if mask_arr.shape[0] != kv.shape[-2]:
                raise DimensionError(
                    f"mask length {mask_arr.shape[0]} != kv rows {kv.shape[-2]}")

    def one_head(qh_, kh_, vh_):
        scores = T.mul(T.matmul(qh_, T.swapaxes(kh_, -1, -2)), 1.0 / math.sqrt(d_head))
        if mask_arr is None:
            weights = T.softmax(scores, axis=-1)
        else:
            weights = T.masked_softmax(scores, mask_arr, axis=-1, allow_empty=allow_empty)
        return T.matmul(weights, vh_)

    if n_heads == 1:
        return one_head(qh, kh, vh)
    outs = []
    for h in range(n_heads):
        sl = slice(h * d_head, (h + 1) * d_head)
        outs.append(one_head(qh[..., sl], kh[..., sl], vh[..., sl]))
    return T.concat(outs, axis=-1)


def init_attention(store: ParamStore, name: str, d_q: int, d_kv: int, d_model: int,
                   rng: np.random.Generator) -> None:
    init_linear(store, f"{name}.wq", d_q, d_model, rng)
    store.create(f"{name}.wk.w", (d_kv, d_model), "normal", rng)
    init_linear(store, f"{name}.wv", d_kv, d_model, rng)


def gru_step(store: ParamStore, name: str, x: Tensor, h: Tensor) -> Tensor:
    """One GRU cell update; returns the new hidden state.

    Gates: r = sigma(W_ir x + W_hr h + b_r), z = sigma(W_iz x + W_hz h + b_z),
    candidate n = tanh(W_in x + W_hn (r*h) + b_n), and
    h' = (1 - z) * h + z * n, so zero parameters halve the hidden state.
    """
    x = T.as_tensor(x)
    h = T.as_tensor(h)
    w_ir = store[f"{name}.w_ir"]
    if x.shape[-1] != w_ir.shape[0]:
        raise DimensionError(f"gru {name!r}: input shape {x.shape} vs W_ir {w_ir.shape}")
    if h.shape[-1] != store[f"{name}.w_hr"].shape[0]:
        raise DimensionError(
            f"gru {name!r}: hidden shape {h.shape} vs W_hr {store[f'{name}.w_hr'].shape}")
    r = T.sigmoid(T.add(T.add(T.matmul(x, w_ir), T.matmul(h, store[f"{name}.w_hr"])),
                        store[f"{name}.b_r"]))
    z = T.sigmoid(T.add(T.add(T.matmul(x, store[f"{name}.w_iz"]),
                              T.matmul(h, store[f"{name}.w_hz"])), store[f"{name}.b_z"]))
    n = T.tanh(T.add(T.add(T.matmul(x, store[f"{name}.w_in"]),
                           T.matmul(T.mul(r, h), store[f"{name}.w_hn"])),
                     store[f"{name}.b_n"]))
    one_minus_z = T.add(T.mul(z, -1.0), 1.0)
    return T.add(T.mul(one_minus_z, h), T.mul(z, n))


def init_gru(store: ParamStore, name: str, d_in: int, d_hidden: int,
             rng: np.random.Generator) -> None:
    for gate in ("r", "z", "n"):
        store.create(f"{name}.w_i{gate}", (d_in, d_hidden), "normal", rng)
        store.create(f"{name}.w_h{gate}", (d_hidden, d_hidden), "normal", rng)
        store.create(f"{name}.b_{gate}", (d_hidden,), "zeros", rng)


# -- losses -------------------------------------------------------------------


def cross_entropy(p: Tensor, y: np.ndarray) -> Tensor:
    """-sum(y * log p) with a 1e-12 probability floor; mean over batch rows.

    ``p`` holds probabilities summing to 1 (checked to 1e-6) along the last
    axis; ``y`` is a constant one-hot array of the same shape.
    """
    p = T.as_tensor(p)
    y = np.asarray(y)
    if y.shape != p.shape:
        raise DimensionError(f"cross_entropy shapes differ: p {p.shape} vs y {y.shape}")
    sums = p.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise InvariantViolation("cross_entropy input does not sum to 1 along last axis")
    onehot_ok = np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)
    if not onehot_ok:
        raise InvariantViolation("cross_entropy target is not one-hot")
    picked = T.reduce_sum(T.mul(T.log(T.clip_min(p, PROB_FLOOR)), y), axis=-1)
    if picked.ndim == 0:
        return T.mul(picked, -1.0)
    return T.mul(T.reduce_mean(picked), -1.0)


def cross_entropy_dist(p: Tensor, y: np.ndarray) -> Tensor:
    """cross_entropy generalized to any target distribution rows.

    Same floor and batch-mean semantics; ``y`` rows must sum to 1 but need
    not be one-hot (used for maximum-entropy supervision of fields that
    carry no claim).  For one-hot rows the value equals cross_entropy.
    """
    p = T.as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError(f"cross_entropy shapes differ: p {p.shape} vs y {y.shape}")
    if np.any(np.abs(p.data.sum(axis=-1) - 1.0) > 1e-6):
        raise InvariantViolation("cross_entropy input does not sum to 1 along last axis")
    if np.any(np.abs(y.sum(axis=-1) - 1.0) > 1e-6) or np.any(y < 0):
        raise InvariantViolation("cross_entropy target rows are not distributions")
    picked = T.reduce_sum(T.mul(T.log(T.clip_min(p, PROB_FLOOR)), y), axis=-1)
    if picked.ndim == 0:
        return T.mul(picked, -1.0)
    return T.mul(T.reduce_mean(picked), -1.0)


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared elementwise differences."""
    pred = T.as_tensor(pred)
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l2_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = T.add(pred, T.mul(target, -1.0))
    return T.reduce_mean(T.mul(diff, diff))


def onehot(indices: Iterable[int], n: int) -> np.ndarray:
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices)
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out
