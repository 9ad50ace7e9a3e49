import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchcl.errors import InvalidArgumentError
from sketchcl.models import LinearFeatureMap, TwoLayerRelu
from sketchcl.regularizers import (PenaltyState, SketchMatrix, Variant, accumulate,
                                   approx_jacobian_for, build_approx_jacobian, memory_cost,
                                   penalty_gradient, penalty_value, sketch_seed)


@pytest.mark.parametrize("text, name", [
    ("rsj-100", "rsj-100"), ("sketch-7", "rsj-7"), ("RSJ_40", "rsj-40"),
    ("full", "full"), ("ewc", "ewc"), ("L2", "l2"),
])
def test_variant_parse(text, name):
    assert Variant.parse(text).name == name


@pytest.mark.parametrize("bad", ["rsj", "sgd", "rsj-0", ""])
def test_variant_parse_rejects(bad):
    with pytest.raises(InvalidArgumentError):
        Variant.parse(bad)


def test_variant_constructor_checks():
    with pytest.raises(InvalidArgumentError):
        Variant("ewc", 3)
    with pytest.raises(InvalidArgumentError):
        Variant("sketch")


def test_sketch_matrix_moments_and_seed():
    S = SketchMatrix.draw(400, 300, seed=5).entries
    assert S.shape == (400, 300)
    assert abs(S.mean()) < 3 / np.sqrt(S.size) * np.sqrt(1 / 400)
    assert S.var() == pytest.approx(1 / 400, rel=0.02)
    np.testing.assert_array_equal(S, SketchMatrix.draw(400, 300, seed=5).entries)
    assert not np.array_equal(S, SketchMatrix.draw(400, 300, seed=6).entries)


def test_sketch_preserves_gram_in_expectation():
    J = np.random.default_rng(0).standard_normal((30, 4))
    acc = np.zeros((4, 4))
    for k in range(400):
        K = build_approx_jacobian(Variant.sketch(10), J, k)
        acc += K.T @ K
    np.testing.assert_allclose(acc / 400, J.T @ J, rtol=0.1, atol=1.5)


def test_sketch_seeds_differ_per_task():
    assert sketch_seed(0, 0) != sketch_seed(0, 1)
    assert sketch_seed(0, 1) == sketch_seed(0, 1)


def test_build_approx_jacobian_variants():
    J = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(build_approx_jacobian(Variant.full(), J), J)
    np.testing.assert_allclose(build_approx_jacobian(Variant.ewc(), J), np.sqrt([10.0, 20.0]))
    assert build_approx_jacobian(Variant.l2(), J) is None
    assert build_approx_jacobian(Variant.sketch(3), J, 0).shape == (3, 2)
    with pytest.raises(InvalidArgumentError):
        build_approx_jacobian(Variant.full(), np.array([[np.inf]]))


@pytest.mark.parametrize("variant", [Variant.full(), Variant.sketch(4), Variant.ewc(), Variant.l2()])
def test_model_path_matches_dense_path(variant):
    m = TwoLayerRelu.experimental(3, 4, 2)
    rng = np.random.default_rng(0)
    theta, X = rng.standard_normal(m.param_count), rng.standard_normal((5, 3))
    a = approx_jacobian_for(m, theta, X, variant, 11)
    b = build_approx_jacobian(variant, m.jacobian(theta, X), 11)
    if b is None:
        assert a is None
    else:
        np.testing.assert_allclose(a, b, atol=1e-12)


def _state(variant, J, anchor, scales=None):
    K = build_approx_jacobian(variant, J, 3)
    return accumulate(PenaltyState.empty(variant, J.shape[1], scales), K, anchor)


@pytest.mark.parametrize("variant", [Variant.full(), Variant.sketch(5), Variant.ewc(), Variant.l2()])
def test_penalty_gradient_matches_finite_difference(variant):
    rng = np.random.default_rng(1)
    J = rng.standard_normal((8, 4))
    state = _state(variant, J, rng.standard_normal(4), rng.uniform(0.5, 2, 4))
    theta = rng.standard_normal(4)
    g = penalty_gradient(state, theta, 0.7)
    eps = 1e-6
    fd = [(penalty_value(state, theta + eps * e, 0.7) - penalty_value(state, theta - eps * e, 0.7)) / (2 * eps)
          for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_full_penalty_closed_form():
    rng = np.random.default_rng(2)
    J, a, theta = rng.standard_normal((6, 3)), rng.standard_normal(3), rng.standard_normal(3)
    state = _state(Variant.full(), J, a)
    assert penalty_value(state, theta, 2.0) == pytest.approx(np.sum((J @ (theta - a)) ** 2))


def test_ewc_and_l2_closed_forms():
    J = np.array([[1.0, 0.0], [1.0, 2.0]])
    a = np.array([1.0, -1.0])
    theta = np.array([2.0, 1.0])
    ewc = _state(Variant.ewc(), J, a)
    # diag(J^T J) = (2, 4); delta = (1, 2)
    assert penalty_value(ewc, theta, 1.0) == pytest.approx(0.5 * (2 * 1 + 4 * 4))
    l2 = _state(Variant.l2(), J, a)
    assert penalty_value(l2, theta, 1.0) == pytest.approx(0.5 * 5)


def test_group_scales_act_on_parameters():
    J = np.eye(2)
    scales = np.array([4.0, 1.0])
    state = _state(Variant.full(), J, np.zeros(2), scales)
    assert penalty_value(state, np.array([1.0, 0.0])) == pytest.approx(0.5 * 4.0)
    np.testing.assert_allclose(state.quadratic_form(), np.diag(scales))


def test_accumulate_stacks_tasks_and_moves_anchor():
    rng = np.random.default_rng(4)
    J1, J2 = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    st1 = accumulate(PenaltyState.empty(Variant.full(), 2), J1, np.ones(2))
    st2 = accumulate(st1, J2, np.zeros(2))
    np.testing.assert_allclose(st2.quadratic_form(), J1.T @ J1 + J2.T @ J2)
    np.testing.assert_array_equal(st2.anchor, 0)
    assert st2.tasks_seen == 2 and st1.tasks_seen == 1


def test_accumulate_shape_errors():
    st_full = PenaltyState.empty(Variant.full(), 3)
    with pytest.raises(InvalidArgumentError):
        accumulate(st_full, np.ones((2, 4)), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        accumulate(PenaltyState.empty(Variant.sketch(5), 3), np.ones((4, 3)), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        accumulate(PenaltyState.empty(Variant.ewc(), 3), np.ones((2, 3)), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        accumulate(PenaltyState.empty(Variant.l2(), 3), np.ones(3), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        accumulate(st_full, np.ones((2, 3)), np.zeros(2))


def test_negative_lambda_rejected():
    state = _state(Variant.l2(), np.eye(2), np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        penalty_value(state, np.ones(2), -1.0)
    with pytest.raises(InvalidArgumentError):
        penalty_gradient(state, np.ones(2), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["full", "rsj-3", "ewc", "l2"]), st.integers(1, 6), st.integers(1, 5),
       st.integers(0, 1000), st.floats(0, 10))
def test_penalty_nonnegative_and_zero_at_anchor(name, m, p, seed, lam):
    rng = np.random.default_rng(seed)
    variant = Variant.parse(name)
    a = rng.standard_normal(p)
    state = _state(variant, rng.standard_normal((m, p)), a)
    assert penalty_value(state, rng.standard_normal(p), lam) >= 0
    assert penalty_value(state, a, lam) == 0
    np.testing.assert_array_equal(penalty_gradient(state, a, lam), 0)


@pytest.mark.parametrize("variant, expected", [
    ("full", lambda p, K, n, s: p * (1 + K * n)),
    ("sketch", lambda p, K, n, s: p * (1 + K * s)),
    ("ewc", lambda p, K, n, s: 2 * p),
    ("l2", lambda p, K, n, s: p),
])
def test_memory_cost_formulas(variant, expected):
    assert memory_cost(variant, 10, 3, n=7, s=4) == expected(10, 3, 7, 4)


def test_memory_cost_agrees_with_stored_state():
    m = LinearFeatureMap(3, num_outputs=2)
    X = np.random.default_rng(0).standard_normal((5, 3))
    theta = np.zeros(m.param_count)
    for variant in (Variant.full(), Variant.sketch(4), Variant.ewc(), Variant.l2()):
        state = PenaltyState.empty(variant, m.param_count)
        for k in range(3):
            state = accumulate(state, approx_jacobian_for(m, theta, X, variant, k), theta)
        # n in the formula counts Jacobian rows (examples times outputs)
        assert state.memory_floats() == memory_cost(variant, m.param_count, 3, n=5 * 2, s=4)


def test_memory_cost_errors():
    with pytest.raises(InvalidArgumentError):
        memory_cost("full", 5, 2)
    with pytest.raises(InvalidArgumentError):
        memory_cost("sketch", 5, 2)
    with pytest.raises(InvalidArgumentError):
        memory_cost("l2", 0, 2)
