"""Modality-routing query bridge.

Grouped task queries (T tasks x K queries, each with a learnable 3D
reference point) attend over the fused LiDAR+camera token sequence.
Localized tasks see only a square window around each query's reference
projections (the locality mask); a router predicts per-query branch
probabilities over {lidar, camera, fusion} and hard-assigns by argmax;
three expert decoders process every query against their branch's tokens;
per-(task, branch) attention pooling compresses kept outputs to a fixed
number of tokens, and a shared tokenwise MLP fuses the concatenation into
the task's output tokens.

Routing isolation is exact by construction: branch pooling applies the
assignment indicator inside masked softmax, which gives discarded queries
exactly zero weight, and empty branches emit exactly zero tokens so every
downstream shape is independent of the routing outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..config import GeometryConfig, ModelConfig
from ..errors import DimensionError
from ..geometry import bev_cell, cam_cell, squash_reference, token_grid_tables
from ..vocab import LOCALIZED_TASKS, TASKS
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.layers import ParamStore
from ..nn.tensor import Tensor

BRANCHES = ("l", "c", "lc")


@dataclass
class BridgeOutputs:
    task_tokens: dict[str, Tensor]          # task -> (B, 3*C_s, C_q)
    probs: Tensor | None                    # (B, T*K, 3) routing probabilities
    assignments: np.ndarray | None          # (B, T*K) argmax branch indices
    masks: np.ndarray                       # (T*K, n_tokens) locality masks
    mode: str


def init_bridge_params(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d = cfg.query_dim
    n_queries = len(TASKS) * cfg.queries_per_task
    store.create("bank.queries", (n_queries, d), "embedding", rng)
    store.create("bank.group", (len(TASKS), d), "embedding", rng)
    store.create("bank.ref", (n_queries, 3), "uniform", rng, gain=1.5)
    L.init_attention(store, "router.attn", d, d, d, rng)
    L.init_linear(store, "router.head", d, 3, rng)
    for branch in BRANCHES:
        L.init_attention(store, f"expert.{branch}.attn", d, d, d, rng)
        L.init_mlp2(store, f"expert.{branch}.ffn", d, cfg.expert_ffn_hidden, d, rng)
        # Zero the residual branch's output layer so a fresh expert equals
        # its attention stage exactly (the layer still receives gradient).
        store[f"expert.{branch}.ffn.fc2.w"].data[:] = 0.0
    L.init_attention(store, "pool.attn", d, d, d, rng)
    for task in TASKS:
        for branch in BRANCHES:
            store.create(f"pool.q.{task}.{branch}", (cfg.pool_tokens, d), "embedding", rng)
    L.init_mlp2(store, "fuse", d, cfg.fuse_hidden, d, rng)


def embed_queries(store: ParamStore, cfg: ModelConfig) -> Tensor:
    """q~ = queries + per-task group embedding, (T*K, C_q)."""
    k = cfg.queries_per_task
    expand = np.repeat(np.eye(len(TASKS)), k, axis=0)
    rows = T.matmul(Tensor(expand), store["bank.group"])
    return T.add(store["bank.queries"], rows)


def reference_points(store: ParamStore, geom: GeometryConfig) -> np.ndarray:
    """Squashed (T*K, 3) reference points inside the scene volume."""
    return squash_reference(store["bank.ref"].data, geom)


def build_local_mask(pi_l: tuple[int, int], pi_c: tuple[int, int], l_l: int, l_c: int,
                     geom: GeometryConfig, cam_flagged: bool = False) -> np.ndarray:
    """Binary mask over the fused token sequence for one query.

    Token u is visible iff its grid coordinate lies within the inf-norm
    window of the BEV projection (LiDAR block) or of the camera projection
    (camera block); flagged camera projections contribute no camera
    entries.  The BEV cell containing the projection is always present, so
    the mask is never empty.
    """
    if l_l < 1 or l_c < 1:
        raise DimensionError(f"window sizes must be >= 1, got l_l={l_l} l_c={l_c}")
    bev_table, cam_table = token_grid_tables(geom)
    bev_hit = np.max(np.abs(bev_table - np.asarray(pi_l)), axis=1) <= l_l / 2.0
    if cam_flagged:
        cam_hit = np.zeros(geom.n_cam_tokens, dtype=bool)
    else:
        cam_hit = np.max(np.abs(cam_table - np.asarray(pi_c)), axis=1) <= l_c / 2.0
    return np.concatenate([bev_hit, cam_hit]).astype(np.float64)


def build_query_masks(store: ParamStore, cfg: ModelConfig,
                      geom: GeometryConfig) -> np.ndarray:
    """(T*K, n_tokens) locality masks; non-localized tasks get all-ones rows.

    Masks depend only on the raw reference points, so results are cached on
    their bytes (reference points are frozen during training anyway).
    """
    raw = np.ascontiguousarray(store["bank.ref"].data)
    return _masks_from_refs(raw.tobytes(), raw.shape[0], cfg.queries_per_task,
                            cfg.window_bev, cfg.window_cam, geom)


@lru_cache(maxsize=8)
def _masks_from_refs(ref_bytes: bytes, n_queries: int, queries_per_task: int,
                     window_bev: int, window_cam: int,
                     geom: GeometryConfig) -> np.ndarray:
    raw = np.frombuffer(ref_bytes, dtype=np.float64).reshape(n_queries, 3)
    refs = squash_reference(raw, geom)
    rows_l, cols_l = bev_cell(refs, geom)
    rows_c, cols_c, flagged = cam_cell(refs, geom)
    bev_table, cam_table = token_grid_tables(geom)
    pi_l = np.stack([rows_l, cols_l], axis=1)
    pi_c = np.stack([rows_c, cols_c], axis=1)
    bev_hit = (np.abs(bev_table[None, :, :] - pi_l[:, None, :]).max(axis=2)
               <= window_bev / 2.0)
    cam_hit = (np.abs(cam_table[None, :, :] - pi_c[:, None, :]).max(axis=2)
               <= window_cam / 2.0)
    cam_hit &= ~flagged[:, None]
    masks = np.concatenate([bev_hit, cam_hit], axis=1).astype(np.float64)
    for t, task in enumerate(TASKS):
        if task not in LOCALIZED_TASKS:
            masks[t * queries_per_task:(t + 1) * queries_per_task, :] = 1.0
    masks.setflags(write=False)
    return masks


def route(store: ParamStore, q_embedded: Tensor, fused: Tensor,
          masks: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Per-query branch probabilities and hard assignments.

    Masked cross-attention pools the fused tokens into a query-conditioned
    summary; a linear head plus softmax yields p_i over (l, c, lc); the
    hard assignment is argmax with ties resolved toward the earlier branch
    (l < c < lc), which is exactly first-maximum argmax over that order.
    """
    summary = L.masked_cross_attention(store, "router.attn", q_embedded, fused, masks)
    logits = L.linear(store, "router.head", summary)
    probs = T.softmax(logits, axis=-1)
    assignments = np.argmax(probs.data, axis=-1)
    return probs, assignments


def expert_apply(store: ParamStore, branch: str, queries: Tensor, kv: Tensor,
                 mask: np.ndarray | None, allow_empty: bool = False) -> Tensor:
    """One expert: masked cross-attention plus a residual feed-forward."""
    attended = L.masked_cross_attention(store, f"expert.{branch}.attn", queries, kv,
                                        mask, allow_empty=allow_empty)
    return T.add(attended, L.mlp2(store, f"expert.{branch}.ffn", attended))


def expert_decode(store: ParamStore, partitions: dict[str, Tensor],
                  features: dict[str, Tensor]) -> dict[str, Tensor]:
    """Decode explicit query partitions: out[m] = expert_m(Q_m, F_m).

    Empty partitions (zero query rows) produce empty outputs.  Partition
    disjointness/coverage is the caller's contract; the batched forward
    path instead keeps all queries per branch and applies the assignment
    indicator during pooling (numerically identical, shape-static).
    """
    outs = {}
    for branch in BRANCHES:
        q = partitions[branch]
        if q.shape[-2] == 0:
            outs[branch] = Tensor(np.zeros(q.shape[:-2] + (0, q.shape[-1])))
        else:
            outs[branch] = expert_apply(store, branch, q, features[branch],
                                        None, allow_empty=False)
    return outs


def aggregate_compress(store: ParamStore, cfg: ModelConfig, task: str,
                       expert_outs: dict[str, Tensor],
                       keep_masks: dict[str, np.ndarray | None]) -> Tensor:
    """Compress kept per-branch outputs to C_s tokens each; fuse with the MLP.

    ``expert_outs[m]`` is (..., K, C_q) for all K task queries;
    ``keep_masks[m]`` is a 0/1 indicator over those queries (None keeps
    all).  Discarded queries get exactly zero pooling weight; a branch
    with nothing kept emits exactly zero tokens, so the output is always
    (..., 3*C_s, C_q).
    """
    pooled = []
    for branch in BRANCHES:
        pool_q = store[f"pool.q.{task}.{branch}"]
        keep = keep_masks.get(branch)
        mask = None if keep is None else np.asarray(keep, dtype=np.float64)
        pooled.append(L.masked_cross_attention(store, "pool.attn", pool_q,
                                               expert_outs[branch], mask,
                                               allow_empty=True))
    stacked = T.concat(pooled, axis=-2)
    return L.mlp2(store, "fuse", stacked)


def bridge_forward(store: ParamStore, cfg: ModelConfig, geom: GeometryConfig,
                   fused_features: Tensor, mode: str) -> BridgeOutputs:
    """Full bridge pass over (B, n_tokens, D) fused features.

    mode 'stacked'     routing bypassed, every branch keeps all queries
                       (the phase-1 training configuration);
    mode 'routed'      router argmax keeps one branch per query;
    mode 'fusion_only' every query forced to the fusion branch (the
                       router-disabled baseline).
    """
    if mode not in ("stacked", "routed", "fusion_only"):
        raise ValueError(f"unknown bridge mode {mode!r}")
    fused_features = T.as_tensor(fused_features)
    n_bev = geom.n_bev_tokens
    k = cfg.queries_per_task
    q_all = embed_queries(store, cfg)
    masks = build_query_masks(store, cfg, geom)

    probs: Tensor | None = None
    assignments: np.ndarray | None = None
    if mode == "routed":
        probs, assignments = route(store, q_all, fused_features, masks)
    elif mode == "fusion_only":
        batch_shape = fused_features.shape[:-2]
        assignments = np.full(batch_shape + (q_all.shape[0],), 2, dtype=np.int64)

    features = {"l": fused_features[..., :n_bev, :],
                "c": fused_features[..., n_bev:, :],
                "lc": fused_features}
    branch_masks = {"l": masks[:, :n_bev], "c": masks[:, n_bev:], "lc": masks}
    expert_outs_all = {
        branch: expert_apply(store, branch, q_all, features[branch],
                             branch_masks[branch], allow_empty=True)
        for branch in BRANCHES
    }

    task_tokens: dict[str, Tensor] = {}
    for t, task in enumerate(TASKS):
        sl = slice(t * k, (t + 1) * k)
        outs = {b: expert_outs_all[b][..., sl, :] for b in BRANCHES}
        keep: dict[str, np.ndarray | None]
        if mode == "stacked":
            keep = {b: None for b in BRANCHES}
        else:
            task_assign = assignments[..., sl]
            keep = {b: (task_assign == i).astype(np.float64)[..., None, :]
                    for i, b in enumerate(BRANCHES)}
        task_tokens[task] = aggregate_compress(store, cfg, task, outs, keep)
    return BridgeOutputs(task_tokens=task_tokens, probs=probs,
                         assignments=assignments, masks=masks, mode=mode)
