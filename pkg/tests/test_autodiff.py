"""Autodiff engine tests: hand-derived oracles for every layer primitive,
finite-difference agreement, and the failure modes the harness must catch."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrapilot.errors import (DegenerateMaskError, DimensionError,
                               InvariantViolation, NondeterministicLossError)
from terrapilot.nn import tensor as T
from terrapilot.nn.gradcheck import finite_diff_check
from terrapilot.nn.layers import (PROB_FLOOR, ParamStore, cross_entropy,
                                  cross_entropy_dist, freeze, gru_step,
                                  init_attention, init_gru, init_linear,
                                  init_mlp2, l2_loss, linear,
                                  masked_cross_attention, mlp2, onehot)
from terrapilot.nn.optim import adam_step
from terrapilot.nn.tensor import Tensor


def rand(rng, *shape):
    return rng.standard_normal(shape)


# -- forward oracles -----------------------------------------------------------


def test_matmul_forward_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 4, 5), rand(rng, 5, 3)
    out = T.matmul(Tensor(a), Tensor(b)).data
    expect = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                expect[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_matmul_backward_matches_hand_rule():
    # For L = sum(G * (A @ B)): dL/dA = G @ B^T, dL/dB = A^T @ G.
    rng = np.random.default_rng(1)
    a_val, b_val, g = rand(rng, 3, 4), rand(rng, 4, 2), rand(rng, 3, 2)
    a, b = Tensor(a_val, requires_grad=True), Tensor(b_val, requires_grad=True)
    out = T.matmul(a, b)
    T.reduce_sum(T.mul(out, g)).backward()
    np.testing.assert_allclose(a.grad, g @ b_val.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a_val.T @ g, atol=1e-12)


def test_softmax_forward_matches_direct_formula():
    rng = np.random.default_rng(2)
    x = rand(rng, 6, 5)
    out = T.softmax(Tensor(x), axis=-1).data
    expect = np.exp(x) / np.exp(x).sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(out, expect, atol=1e-12)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_matches_renormalized_rows():
    rng = np.random.default_rng(3)
    x = rand(rng, 4, 6)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=float)
    out = T.masked_softmax(Tensor(x), mask, axis=-1).data
    expect = np.exp(x) * mask
    expect /= expect.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(out, expect, atol=1e-12)
    assert np.all(out[:, mask == 0] == 0.0)


def test_masked_softmax_empty_row_raises_unless_allowed():
    x = Tensor(np.zeros((2, 3)))
    mask = np.zeros(3)
    with pytest.raises(DegenerateMaskError):
        T.masked_softmax(x, mask, axis=-1)
    out = T.masked_softmax(x, mask, axis=-1, allow_empty=True).data
    assert np.all(out == 0.0)


def test_gru_step_matches_scalar_formula():
    # 1-d input, 1-d hidden: every gate collapses to scalar arithmetic.
    store = ParamStore()
    rng = np.random.default_rng(4)
    init_gru(store, "cell", 1, 1, rng)
    x_val, h_val = 0.7, -0.3

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    def p(name):
        return float(store[name].data.squeeze())

    r = sig(x_val * p("cell.w_ir") + h_val * p("cell.w_hr") + p("cell.b_r"))
    z = sig(x_val * p("cell.w_iz") + h_val * p("cell.w_hz") + p("cell.b_z"))
    n = math.tanh(x_val * p("cell.w_in") + r * h_val * p("cell.w_hn") + p("cell.b_n"))
    expect = (1.0 - z) * h_val + z * n

    out = gru_step(store, "cell", Tensor(np.array([[x_val]])),
                   Tensor(np.array([[h_val]])))
    assert out.data.shape == (1, 1)
    assert abs(float(out.data[0, 0]) - expect) < 1e-12


def test_attention_single_kv_row_returns_its_value_projection():
    # One candidate row gets weight exactly 1, so output == value projection.
    store = ParamStore()
    rng = np.random.default_rng(5)
    init_attention(store, "att", 4, 6, 8, rng)
    q = Tensor(rand(rng, 2, 4))
    kv_row = rand(rng, 1, 6)
    out = masked_cross_attention(store, "att", q, Tensor(kv_row)).data
    expect = kv_row @ store["att.wv.w"].data + store["att.wv.b"].data
    np.testing.assert_allclose(out, np.broadcast_to(expect, out.shape), atol=1e-12)


def test_attention_mask_equals_row_deletion():
    # Masked attention over all rows == unmasked attention over kept rows.
    store = ParamStore()
    rng = np.random.default_rng(6)
    init_attention(store, "att", 4, 6, 8, rng)
    q = Tensor(rand(rng, 3, 4))
    kv = rand(rng, 7, 6)
    mask = np.array([1, 0, 1, 1, 0, 1, 1], dtype=float)
    masked = masked_cross_attention(store, "att", q, Tensor(kv), mask=mask).data
    deleted = masked_cross_attention(store, "att", q, Tensor(kv[mask == 1])).data
    np.testing.assert_allclose(masked, deleted, atol=1e-12)


def test_linear_shape_mismatch_raises():
    store = ParamStore()
    init_linear(store, "fc", 3, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        linear(store, "fc", Tensor(np.zeros((5, 4))))


# -- losses ---------------------------------------------------------------------


def test_cross_entropy_uniform_is_log_n():
    probs = T.softmax(Tensor(np.zeros((2, 3))), axis=-1)
    loss = cross_entropy(probs, onehot([0, 2], 3))
    assert abs(float(loss.data) - math.log(3)) < 1e-9


def test_cross_entropy_rejects_non_distribution_and_non_onehot():
    bad_p = Tensor(np.full((1, 3), 0.5))
    with pytest.raises(InvariantViolation):
        cross_entropy(bad_p, onehot([0], 3))
    good_p = T.softmax(Tensor(np.zeros((1, 3))), axis=-1)
    with pytest.raises(InvariantViolation):
        cross_entropy(good_p, np.array([[0.5, 0.5, 0.0]]))


def test_cross_entropy_dist_matches_onehot_case_and_floor():
    rng = np.random.default_rng(7)
    probs = T.softmax(Tensor(rand(rng, 4, 5)), axis=-1)
    y = onehot([1, 4, 0, 2], 5)
    a = cross_entropy(probs, y)
    b = cross_entropy_dist(probs, y)
    assert abs(float(a.data) - float(b.data)) < 1e-12
    # The probability floor keeps a hard-zero prediction finite.
    p = Tensor(np.array([[1.0, 0.0]]))
    loss = cross_entropy_dist(p, np.array([[0.0, 1.0]]))
    assert abs(float(loss.data) + math.log(PROB_FLOOR)) < 1e-9


def test_l2_loss_matches_mean_square():
    rng = np.random.default_rng(8)
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)
    loss = l2_loss(Tensor(a), Tensor(b))
    assert abs(float(loss.data) - np.mean((a - b) ** 2)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_softmax_rows_are_distributions(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 5.0, size=(3, 7))
    out = T.softmax(Tensor(x), axis=-1).data
    assert np.all(out > 0.0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    # Shift invariance per row.
    shifted = T.softmax(Tensor(x + rng.normal()), axis=-1).data
    np.testing.assert_allclose(out, shifted, atol=1e-9)


# -- finite differences ----------------------------------------------------------


def composite_loss(store: ParamStore) -> Tensor:
    """A small graph touching every layer family (attention, MLP, GRU)."""
    rng = np.random.default_rng(11)
    q = Tensor(rand(rng, 2, 4))
    kv = Tensor(rand(rng, 6, 4))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=float)
    att = masked_cross_attention(store, "att", q, kv, mask=mask)
    hidden = T.tanh(mlp2(store, "mlp", att))
    h = Tensor(np.zeros((2, 3)))
    h = gru_step(store, "gru", hidden, h)
    probs = T.softmax(linear(store, "out", h), axis=-1)
    return T.add(cross_entropy(probs, onehot([0, 1], 2)),
                 l2_loss(T.sigmoid(h), np.zeros((2, 3))))


def make_composite_store() -> ParamStore:
    store = ParamStore()
    rng = np.random.default_rng(12)
    init_attention(store, "att", 4, 4, 4, rng)
    init_mlp2(store, "mlp", 4, 5, 3, rng)
    init_gru(store, "gru", 3, 3, rng)
    init_linear(store, "out", 3, 2, rng)
    return store


def test_finite_diff_passes_on_composite_graph():
    store = make_composite_store()
    report = finite_diff_check(lambda: composite_loss(store), store,
                               coords_per_tensor=4)
    assert report.passed, report.summary()
    assert report.max_rel_err < 1e-3


def test_finite_diff_flags_corrupted_gradient():
    # Scaling one parameter's analytic gradient by 1.05 must trip the check:
    # proves the harness has the sensitivity the tolerance claims.
    store = make_composite_store()
    report = finite_diff_check(lambda: composite_loss(store), store,
                               coords_per_tensor=4,
                               grad_scale={"mlp.fc1.w": 1.05})
    assert not report.passed
    assert report.worst_param == "mlp.fc1.w"


def test_finite_diff_rejects_nondeterministic_loss():
    store = ParamStore()
    init_linear(store, "fc", 2, 2, np.random.default_rng(0))
    state = {"calls": 0}

    def noisy_loss():
        state["calls"] += 1
        x = Tensor(np.full((1, 2), float(state["calls"])))
        return T.reduce_sum(linear(store, "fc", x))

    with pytest.raises(NondeterministicLossError):
        finite_diff_check(noisy_loss, store, coords_per_tensor=2)


# -- optimizer --------------------------------------------------------------------


def test_adam_matches_hand_computed_two_steps():
    store = ParamStore()
    store.add("w", np.array([2.0]))
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8

    w, m, v = 2.0, 0.0, 0.0
    for t in (1, 2):
        g = 2.0 * w  # gradient of w^2
        store.zero_grad()
        p = store["w"]
        loss = T.mul(T.mul(p, p), 1.0)
        T.reduce_sum(loss).backward()
        np.testing.assert_allclose(p.grad, [g], atol=1e-12)
        adam_step(store, lr, (b1, b2), eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
        assert abs(float(p.data[0]) - w) < 1e-12


def test_adam_requires_gradients_for_trainable_params():
    store = ParamStore()
    store.add("w", np.ones(2))
    with pytest.raises(InvariantViolation):
        adam_step(store, 0.1)


def test_adam_skips_frozen_params_entirely():
    store = ParamStore()
    store.add("w", np.ones(2))
    store.add("frozen", np.ones(2))
    freeze(store, lambda name: name == "frozen")
    store["w"].grad = np.ones(2)  # frozen param has no grad: must not error
    before = store.checksum("frozen")
    adam_step(store, 0.1)
    assert store.checksum("frozen") == before
    assert not np.allclose(store["w"].data, 1.0)


def test_param_store_rejects_duplicate_names():
    store = ParamStore()
    store.add("w", np.ones(1))
    with pytest.raises(InvariantViolation):
        store.add("w", np.ones(1))


def test_checksum_is_value_sensitive_and_name_sensitive():
    a = ParamStore()
    a.add("w", np.ones(3))
    b = ParamStore()
    b.add("w", np.ones(3))
    assert a.checksum() == b.checksum()
    c = ParamStore()
    c.add("v", np.ones(3))
    assert a.checksum() != c.checksum()
    b["w"].data[0] += 1e-9
    assert a.checksum() != b.checksum()
