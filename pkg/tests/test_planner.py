"""Planner tests: the GRU decoder against a step-by-step reimplementation,
planning-token pooling invariances, and winner-take-all loss semantics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrapilot.config import ModelConfig
from terrapilot.errors import DimensionError
from terrapilot.model.core import TerraModel
from terrapilot.model.planner import (N_WAYPOINTS, gru_decode,
                                      init_planner_params,
                                      make_planning_token)
from terrapilot.nn import layers as L
from terrapilot.nn import tensor as T
from terrapilot.nn.layers import ParamStore
from terrapilot.nn.tensor import Tensor
from terrapilot.sim.scene import horizon_points
from terrapilot.vocab import TASKS


def planner_store(cfg: ModelConfig, seed=0) -> ParamStore:
    store = ParamStore()
    init_planner_params(store, cfg, np.random.default_rng(seed))
    return store


def test_gru_decode_matches_manual_unroll():
    cfg = ModelConfig(n_modes=2, plan_latent=6, gru_hidden=5, waypoint_embed=3)
    store = planner_store(cfg)
    rng = np.random.default_rng(1)
    z = rng.standard_normal((4, cfg.plan_latent))
    got = gru_decode(store, cfg, Tensor(z)).data

    # Manual unroll using the same primitive layers, one mode at a time.
    for m in range(cfg.n_modes):
        h = L.linear(store, f"plan.mode{m}", Tensor(z))
        y = Tensor(np.zeros((4, 2)))
        for t in range(N_WAYPOINTS):
            x = L.linear(store, "plan.wp_embed", y)
            h = L.gru_step(store, "plan.gru", x, h)
            y = L.linear(store, "plan.out", h)
            np.testing.assert_allclose(got[:, m, t], y.data, atol=1e-12)


def test_gru_decode_shapes_and_latent_squeeze():
    cfg = ModelConfig(n_modes=3)
    store = planner_store(cfg)
    z2 = Tensor(np.zeros((5, cfg.plan_latent)))
    z3 = Tensor(np.zeros((5, 1, cfg.plan_latent)))
    a = gru_decode(store, cfg, z2)
    b = gru_decode(store, cfg, z3)
    assert a.data.shape == (5, 3, N_WAYPOINTS, 2)
    np.testing.assert_allclose(a.data, b.data, atol=1e-15)


def test_modes_differ_at_random_init():
    cfg = ModelConfig(n_modes=3)
    store = planner_store(cfg)
    z = Tensor(np.random.default_rng(2).standard_normal((1, cfg.plan_latent)))
    out = gru_decode(store, cfg, z).data[0]
    assert np.abs(out[0] - out[1]).max() > 1e-8
    assert np.abs(out[1] - out[2]).max() > 1e-8


def test_planning_token_is_order_invariant_within_a_task(tiny_model, cfg):
    rng = np.random.default_rng(3)
    tokens = {task: Tensor(rng.standard_normal(
        (2, 3 * cfg.model.pool_tokens, cfg.model.query_dim)))
        for task in TASKS}
    _, z = make_planning_token(tiny_model.store, cfg.model, tokens)
    shuffled = dict(tokens)
    perm = rng.permutation(3 * cfg.model.pool_tokens)
    shuffled["obstacle"] = Tensor(tokens["obstacle"].data[:, perm, :])
    _, z2 = make_planning_token(tiny_model.store, cfg.model, shuffled)
    np.testing.assert_allclose(z.data, z2.data, atol=1e-12)


def test_waypoint_loss_equals_best_mode_mse(tiny_model):
    rng = np.random.default_rng(4)
    traj = rng.standard_normal((3, tiny_model.cfg.model.n_modes, N_WAYPOINTS, 2))
    horizon = rng.standard_normal((3, N_WAYPOINTS, 2))
    loss = tiny_model.waypoint_loss(Tensor(traj), horizon)
    per_mode = ((traj - horizon[:, None]) ** 2).mean(axis=(-2, -1))
    assert abs(float(loss.data) - per_mode.min(axis=1).mean()) < 1e-12


def test_waypoint_loss_gradient_flows_only_to_winning_mode():
    cfg = ModelConfig(n_modes=2, plan_latent=4, gru_hidden=4, waypoint_embed=3)
    # Direct check on the loss: only the winning mode's entries get grad.
    rng = np.random.default_rng(5)
    traj_val = rng.standard_normal((1, 2, N_WAYPOINTS, 2))
    horizon = traj_val[0, 1] + 0.01  # mode 1 is the clear winner
    traj = Tensor(traj_val, requires_grad=True)
    model = TerraModel.__new__(TerraModel)  # loss only needs cfg-free math
    loss = TerraModel.waypoint_loss(model, traj, horizon[None])
    loss.backward()
    assert np.all(traj.grad[0, 0] == 0.0)
    assert np.any(traj.grad[0, 1] != 0.0)


def test_horizon_points_picks_the_four_planner_indices():
    traj = np.arange(40, dtype=np.float64).reshape(20, 2)
    horizon = horizon_points(traj)
    assert horizon.shape == (N_WAYPOINTS, 2)
    np.testing.assert_array_equal(horizon, traj[[1, 3, 9, 19]])


def test_horizon_points_rejects_wrong_length():
    with pytest.raises(DimensionError):
        horizon_points(np.zeros((10, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_waypoint_loss_lower_bounds_every_mode(seed):
    rng = np.random.default_rng(seed)
    traj = rng.standard_normal((2, 3, N_WAYPOINTS, 2))
    horizon = rng.standard_normal((2, N_WAYPOINTS, 2))
    model = TerraModel.__new__(TerraModel)
    loss = float(TerraModel.waypoint_loss(model, Tensor(traj), horizon).data)
    per_mode = ((traj - horizon[:, None]) ** 2).mean(axis=(-2, -1))
    for m in range(3):
        assert loss <= per_mode[:, m].mean() + 1e-12
