"""Locality-mask tests: the vectorized builder against an all-scalar brute
force, single-query/batch agreement, and the degenerate-input guards."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrapilot.config import GeometryConfig
from terrapilot.errors import DimensionError
from terrapilot.geometry import bev_cell, cam_cell, squash_reference, token_grid_tables
from terrapilot.model.bridge import (build_local_mask, build_query_masks,
                                     reference_points)
from terrapilot.selfcheck import brute_force_mask, random_geometry
from terrapilot.vocab import LOCALIZED_TASKS, TASKS


def test_builder_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(123)
    for _ in range(150):
        geom = random_geometry(rng)
        raw = rng.normal(0.0, 2.0, size=3)
        window_bev = int(rng.integers(1, 8))
        window_cam = int(rng.integers(1, 8))
        expect = brute_force_mask(raw, window_bev, window_cam, geom)
        ref = squash_reference(raw[None, :], geom)
        row_l, col_l = bev_cell(ref, geom)
        row_c, col_c, flagged = cam_cell(ref, geom)
        got = build_local_mask((int(row_l[0]), int(col_l[0])),
                               (int(row_c[0]), int(col_c[0])),
                               window_bev, window_cam, geom,
                               cam_flagged=bool(flagged[0]))
        np.testing.assert_array_equal(got, expect)


def test_window_one_keeps_exactly_the_projected_cell():
    geom = GeometryConfig()
    mask = build_local_mask((4, 7), (100, 100), 1, 1, geom, cam_flagged=True)
    bev = mask[:geom.n_bev_tokens].reshape(geom.bev_rows, geom.bev_cols)
    assert bev.sum() == 1.0
    assert bev[4, 7] == 1.0
    assert mask[geom.n_bev_tokens:].sum() == 0.0


def test_flagged_camera_contributes_no_camera_entries():
    geom = GeometryConfig()
    with_cam = build_local_mask((4, 7), (5, 9), 5, 5, geom, cam_flagged=False)
    without = build_local_mask((4, 7), (5, 9), 5, 5, geom, cam_flagged=True)
    np.testing.assert_array_equal(with_cam[:geom.n_bev_tokens],
                                  without[:geom.n_bev_tokens])
    assert with_cam[geom.n_bev_tokens:].sum() > 0
    assert without[geom.n_bev_tokens:].sum() == 0


def test_window_below_one_is_rejected():
    geom = GeometryConfig()
    with pytest.raises(DimensionError):
        build_local_mask((0, 0), (0, 0), 0, 5, geom)
    with pytest.raises(DimensionError):
        build_local_mask((0, 0), (0, 0), 5, -1, geom)


def test_batch_builder_rows_match_single_query_builder(tiny_model, cfg):
    store, geom, mc = tiny_model.store, cfg.geometry, cfg.model
    masks = build_query_masks(store, mc, geom)
    assert masks.shape == (len(TASKS) * mc.queries_per_task, geom.n_tokens)

    refs = reference_points(store, geom)
    rows_l, cols_l = bev_cell(refs, geom)
    rows_c, cols_c, flagged = cam_cell(refs, geom)
    localized = [t for t, task in enumerate(TASKS) if task in LOCALIZED_TASKS]
    rng = np.random.default_rng(0)
    for t in localized:
        for i in rng.integers(t * mc.queries_per_task,
                              (t + 1) * mc.queries_per_task, size=8):
            single = build_local_mask((int(rows_l[i]), int(cols_l[i])),
                                      (int(rows_c[i]), int(cols_c[i])),
                                      mc.window_bev, mc.window_cam, geom,
                                      cam_flagged=bool(flagged[i]))
            np.testing.assert_array_equal(masks[i], single)


def test_non_localized_tasks_see_every_token(tiny_model, cfg):
    masks = build_query_masks(tiny_model.store, cfg.model, cfg.geometry)
    k = cfg.model.queries_per_task
    for t, task in enumerate(TASKS):
        block = masks[t * k:(t + 1) * k]
        if task in LOCALIZED_TASKS:
            assert np.any(block == 0.0), f"{task} should be localized"
        else:
            assert np.all(block == 1.0), f"{task} should see all tokens"


def test_every_mask_row_is_nonempty(tiny_model, cfg):
    # The BEV cell containing the projection is always visible, so no
    # query can end up with an empty candidate set.
    masks = build_query_masks(tiny_model.store, cfg.model, cfg.geometry)
    assert np.all(masks.sum(axis=1) >= 1.0)


def test_masks_are_cached_and_immutable(tiny_model, cfg):
    a = build_query_masks(tiny_model.store, cfg.model, cfg.geometry)
    b = build_query_masks(tiny_model.store, cfg.model, cfg.geometry)
    assert a is b
    with pytest.raises(ValueError):
        a[0, 0] = 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 7), st.integers(1, 7))
def test_builder_brute_force_property(seed, window_bev, window_cam):
    rng = np.random.default_rng(seed)
    geom = random_geometry(rng)
    raw = rng.normal(0.0, 3.0, size=3)
    expect = brute_force_mask(raw, window_bev, window_cam, geom)
    ref = squash_reference(raw[None, :], geom)
    row_l, col_l = bev_cell(ref, geom)
    row_c, col_c, flagged = cam_cell(ref, geom)
    got = build_local_mask((int(row_l[0]), int(col_l[0])),
                           (int(row_c[0]), int(col_c[0])),
                           window_bev, window_cam, geom,
                           cam_flagged=bool(flagged[0]))
    np.testing.assert_array_equal(got, expect)
    assert got[:geom.n_bev_tokens].sum() >= 1.0
