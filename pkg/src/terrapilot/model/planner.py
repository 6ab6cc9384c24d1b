"""Planning token, action latent, and the multimodal GRU waypoint decoder.

A single learnable token cross-attends over the concatenation of all five
tasks' compressed tokens, a two-layer MLP maps the pooled vector to the
action latent, and per-mode linear maps seed a GRU that autoregressively
emits four ego-frame waypoints per mode (each waypoint is a linear readout
of the hidden state; the model's own previous waypoint is the next input
at train and test time alike).
"""

from __future__ import annotations

import numpy as np

from ..config import ModelConfig
from ..vocab import TASKS
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.layers import ParamStore
from ..nn.tensor import Tensor

N_WAYPOINTS = 4


def init_planner_params(store: ParamStore, cfg: ModelConfig,
                        rng: np.random.Generator) -> None:
    d = cfg.query_dim
    store.create("plan.token", (1, d), "embedding", rng)
    L.init_attention(store, "plan.attn", d, d, d, rng)
    L.init_mlp2(store, "plan.latent", d, 2 * cfg.plan_latent, cfg.plan_latent, rng)
    for m in range(cfg.n_modes):
        L.init_linear(store, f"plan.mode{m}", cfg.plan_latent, cfg.gru_hidden, rng)
    L.init_linear(store, "plan.wp_embed", 2, cfg.waypoint_embed, rng)
    L.init_gru(store, "plan.gru", cfg.waypoint_embed, cfg.gru_hidden, rng)
    L.init_linear(store, "plan.out", cfg.gru_hidden, 2, rng)


def make_planning_token(store: ParamStore, cfg: ModelConfig,
                        task_tokens: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Pool every task's compressed tokens into x_p, then map to the latent z.

    Returns ``(x_p, z)`` with shapes (..., 1, query_dim) and
    (..., 1, plan_latent).  Pooling uses one attention query, so the result
    is invariant to token order within a task (set semantics).
    """
    kv = T.concat([task_tokens[task] for task in TASKS], axis=-2)
    x_p = L.masked_cross_attention(store, "plan.attn", store["plan.token"], kv,
                                   n_heads=cfg.n_heads)
    z = L.mlp2(store, "plan.latent", x_p)
    return x_p, z


def gru_decode(store: ParamStore, cfg: ModelConfig, z: Tensor) -> Tensor:
    """Decode ``z`` into (..., n_modes, 4, 2) waypoint tensors.

    Per mode: the hidden state starts from a mode-specific linear map of z,
    the first input embeds the ego origin (0, 0), and each step reads the
    waypoint off the hidden state and feeds it back in.
    """
    z = T.as_tensor(z)
    if z.ndim > 1 and z.shape[-2] == 1:
        z = T.reshape(z, z.shape[:-2] + (z.shape[-1],))
    modes = []
    for m in range(cfg.n_modes):
        h = L.linear(store, f"plan.mode{m}", z)
        y = T.as_tensor(np.zeros(z.shape[:-1] + (2,)))
        steps = []
        for _t in range(N_WAYPOINTS):
            h = L.gru_step(store, "plan.gru", L.linear(store, "plan.wp_embed", y), h)
            y = L.linear(store, "plan.out", h)
            steps.append(y)
        modes.append(T.stack(steps, axis=-2))
    return T.stack(modes, axis=-3)
