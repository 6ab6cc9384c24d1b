"""Bridge tests: query bank structure, the three forward modes, and the
hard-routing isolation guarantee (non-assigned experts cannot leak)."""

from __future__ import annotations

import numpy as np
import pytest

from terrapilot.config import (GeometryConfig, ModelConfig, PipelineConfig,
                               SimConfig, replace)
from terrapilot.model.bridge import BRANCHES, bridge_forward, embed_queries
from terrapilot.model.core import TerraModel
from terrapilot.sim.dataset import generate_records
from terrapilot.vocab import TASKS


def small_cfg() -> PipelineConfig:
    geom = GeometryConfig(bev_rows=6, bev_cols=6, cam_rows=4, cam_cols=5,
                          feat_dim=16)
    model = ModelConfig(query_dim=16, queries_per_task=4, pool_tokens=2,
                        window_bev=3, window_cam=3, expert_ffn_hidden=16,
                        fuse_hidden=16, plan_latent=16, gru_hidden=16,
                        waypoint_embed=8, n_modes=2, n_obstacle_slots=2)
    return PipelineConfig(sim=SimConfig(geometry=geom), model=model)


@pytest.fixture(scope="module")
def small_model():
    return TerraModel(small_cfg(), seed=11)


@pytest.fixture(scope="module")
def small_records(small_model):
    return generate_records(6, seed=21, cfg=small_model.cfg)


def clone_model(model: TerraModel) -> TerraModel:
    from terrapilot.nn.layers import ParamStore
    store = ParamStore(dtype=model.cfg.model.dtype)
    for name, tensor in model.store.items():
        store.add(name, tensor.data.copy(),
                  trainable=model.store.is_trainable(name))
    return TerraModel(model.cfg, seed=model.seed, store=store)


def feature_batch(records) -> np.ndarray:
    return np.stack([r.features.fused_tokens for r in records])


# -- query bank ------------------------------------------------------------------


def test_default_model_has_320_queries_64_per_task(tiny_model, cfg):
    queries = tiny_model.store["bank.queries"].data
    assert len(TASKS) == 5
    assert cfg.model.queries_per_task == 64
    assert queries.shape == (5 * 64, cfg.model.query_dim)
    assert queries.shape[0] == 320
    assert tiny_model.store["bank.group"].data.shape == (5, cfg.model.query_dim)
    assert tiny_model.store["bank.ref"].data.shape == (320, 3)


def test_group_embedding_is_shared_within_each_task(small_model):
    cfg = small_model.cfg
    k = cfg.model.queries_per_task
    embedded = embed_queries(small_model.store, cfg.model).data
    base = small_model.store["bank.queries"].data
    group = small_model.store["bank.group"].data
    offsets = embedded - base
    for t in range(len(TASKS)):
        block = offsets[t * k:(t + 1) * k]
        np.testing.assert_allclose(block, np.broadcast_to(group[t], block.shape),
                                   atol=1e-12)


# -- forward modes ----------------------------------------------------------------


def test_mode_shapes_and_assignment_semantics(small_model, small_records):
    cfg = small_model.cfg
    feats = feature_batch(small_records)
    n_q = len(TASKS) * cfg.model.queries_per_task
    b = feats.shape[0]

    stacked = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                             feats, "stacked")
    assert stacked.probs is None and stacked.assignments is None

    routed = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                            feats, "routed")
    assert routed.probs.data.shape == (b, n_q, len(BRANCHES))
    np.testing.assert_allclose(routed.probs.data.sum(axis=-1), 1.0, atol=1e-9)
    assert routed.assignments.shape == (b, n_q)
    assert set(np.unique(routed.assignments)) <= {0, 1, 2}
    np.testing.assert_array_equal(routed.assignments,
                                  np.argmax(routed.probs.data, axis=-1))

    fusion = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                            feats, "fusion_only")
    assert fusion.probs is None
    np.testing.assert_array_equal(fusion.assignments,
                                  np.full((b, n_q), 2))

    for out in (stacked, routed, fusion):
        for task in TASKS:
            assert out.task_tokens[task].data.shape == \
                (b, 3 * cfg.model.pool_tokens, cfg.model.query_dim)

    with pytest.raises(ValueError):
        bridge_forward(small_model.store, cfg.model, cfg.geometry, feats, "bogus")


def test_zeroed_router_head_ties_break_toward_first_branch(small_model,
                                                           small_records):
    # Equal routing logits must argmax to branch 0 for every query.
    model = clone_model(small_model)
    model.store["router.head.w"].data[:] = 0.0
    model.store["router.head.b"].data[:] = 0.0
    feats = feature_batch(small_records)
    out = bridge_forward(model.store, model.cfg.model, model.cfg.geometry,
                         feats, "routed")
    np.testing.assert_allclose(out.probs.data, 1.0 / 3.0, atol=1e-12)
    assert np.all(out.assignments == 0)


# -- hard-routing isolation --------------------------------------------------------


def zero_expert(model: TerraModel, branch: str) -> None:
    for name, tensor in model.store.items():
        if name.startswith(f"expert.{branch}."):
            tensor.data[:] = 0.0


def max_task_token_diff(a, b) -> float:
    return max(float(np.max(np.abs(a.task_tokens[t].data
                                   - b.task_tokens[t].data))) for t in TASKS)


def test_fusion_only_ignores_single_modality_experts(small_model, small_records):
    cfg = small_model.cfg
    feats = feature_batch(small_records)
    base = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                          feats, "fusion_only")
    stripped = clone_model(small_model)
    zero_expert(stripped, "l")
    zero_expert(stripped, "c")
    out = bridge_forward(stripped.store, cfg.model, cfg.geometry,
                         feats, "fusion_only")
    assert max_task_token_diff(base, out) <= 1e-12


def test_routed_output_ignores_unassigned_experts(small_model, small_records):
    cfg = small_model.cfg
    feats = feature_batch(small_records)
    base = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                          feats, "routed")
    used = set(np.unique(base.assignments))
    unused = [b for i, b in enumerate(BRANCHES) if i not in used]
    stripped = clone_model(small_model)
    for branch in unused:
        zero_expert(stripped, branch)
    out = bridge_forward(stripped.store, cfg.model, cfg.geometry,
                         feats, "routed")
    np.testing.assert_array_equal(base.assignments, out.assignments)
    assert max_task_token_diff(base, out) <= 1e-12


def test_zeroing_an_assigned_expert_does_change_outputs(small_model,
                                                        small_records):
    # Sanity check that the isolation test has teeth: zeroing an expert
    # that IS in use must move the outputs.
    cfg = small_model.cfg
    feats = feature_batch(small_records)
    base = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                          feats, "fusion_only")
    stripped = clone_model(small_model)
    zero_expert(stripped, "lc")
    out = bridge_forward(stripped.store, cfg.model, cfg.geometry,
                         feats, "fusion_only")
    assert max_task_token_diff(base, out) > 1e-6


def test_stacked_mode_uses_all_three_experts(small_model, small_records):
    cfg = small_model.cfg
    feats = feature_batch(small_records)
    base = bridge_forward(small_model.store, cfg.model, cfg.geometry,
                          feats, "stacked")
    for branch in BRANCHES:
        stripped = clone_model(small_model)
        zero_expert(stripped, branch)
        out = bridge_forward(stripped.store, cfg.model, cfg.geometry,
                             feats, "stacked")
        assert max_task_token_diff(base, out) > 1e-9, branch
