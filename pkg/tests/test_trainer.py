import numpy as np
import pytest

from sketchcl.errors import DivergenceError, InvalidArgumentError
from sketchcl.models import Dataset, LinearFeatureMap, RandomReluFeatures, TwoLayerRelu
from sketchcl.regularizers import PenaltyState, Variant, accumulate, build_approx_jacobian
from sketchcl.theory.checks import sequential_vs_joint
from sketchcl.theory.sketching import partially_sketched_gd
from sketchcl.trainer import (TrainConfig, auto_stepsize, joint_train, pooled_mse,
                              run_joint_sequence, run_sequence, single_head_accuracy,
                              train_first_task, train_next_task)


def _regression(n=40, d=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    return Dataset.regression(X, X @ rng.standard_normal(d) + 0.1 * rng.standard_normal(n))


def test_gd_reaches_least_squares():
    ds = _regression()
    theta, trace = train_first_task(LinearFeatureMap(5), ds, TrainConfig(max_iters=5000, grad_tol=1e-12))
    expected = np.linalg.lstsq(ds.features, ds.targets[:, 0], rcond=None)[0]
    np.testing.assert_allclose(theta.values, expected, atol=1e-10)
    assert trace.grad_norm <= 1e-12
    assert np.all(np.diff(trace.losses) <= 1e-12)


def test_auto_stepsize_is_point_nine_over_lambda_max():
    J = np.random.default_rng(0).standard_normal((20, 4))
    lmax = np.linalg.eigvalsh(J.T @ J)[-1]
    assert auto_stepsize(J, iters=500) == pytest.approx(0.9 / lmax, rel=1e-8)
    ds = Dataset.regression(J, np.zeros(20))
    assert auto_stepsize(LinearFeatureMap(4), ds, iters=500) == pytest.approx(0.9 / lmax, rel=1e-8)
    assert auto_stepsize(np.zeros((3, 2))) == 1.0


def test_divergence_names_stepsize():
    ds = _regression()
    with pytest.raises(DivergenceError, match="stepsize 10"):
        train_first_task(LinearFeatureMap(5), ds, TrainConfig(stepsize=10.0, max_iters=500))


@pytest.mark.parametrize("kwargs", [dict(stepsize=0.0), dict(max_iters=0), dict(lam=-1.0),
                                    dict(batch_size=0)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        TrainConfig(**kwargs)


def test_minibatch_converges_near_least_squares():
    ds = _regression(n=64)
    cfg = TrainConfig(stepsize=0.002, batch_size=16, max_iters=20_000, grad_tol=1e-9, seed=1)
    theta, trace = train_first_task(LinearFeatureMap(5), ds, cfg)
    expected = np.linalg.lstsq(ds.features, ds.targets[:, 0], rcond=None)[0]
    assert not trace.full_batch
    assert np.linalg.norm(theta.values - expected) < 0.05


def test_sketched_training_matches_partially_sketched_recursion():
    d = 6
    A, B = _regression(30, d, 1), _regression(25, d, 2)
    model = LinearFeatureMap(d)
    theta_A, _ = train_first_task(model, A, TrainConfig(max_iters=5000, grad_tol=1e-13))
    variant = Variant.sketch(8)
    K = build_approx_jacobian(variant, A.features, 99)
    state = accumulate(PenaltyState.empty(variant, d), K, theta_A)
    eta = 0.01
    cfg = TrainConfig(stepsize=eta, max_iters=200, lam=1.0, grad_tol=0.0, record_iterates=True)
    _, trace = train_next_task(model, B, state, cfg)
    S = np.random.Generator(np.random.Philox(np.random.SeedSequence([99]))).standard_normal((8, 30)) / np.sqrt(8)
    np.testing.assert_allclose(S @ A.features, K)
    ref = partially_sketched_gd(A.features, B.features, B.targets[:, 0], theta_A.values, S, eta,
                                200, theta0=theta_A.values)
    np.testing.assert_allclose(np.asarray(trace.iterates), ref, atol=1e-10)


def test_full_variant_sequential_equals_joint():
    dev, steps = sequential_vs_joint(d=8, n=20, steps=100)
    assert steps == 100 and dev <= 1e-8


def test_joint_train_uses_all_data():
    A, B = _regression(20, 4, 1), _regression(20, 4, 2)
    theta, _ = joint_train(LinearFeatureMap(4), [A, B], TrainConfig(max_iters=5000, grad_tol=1e-12))
    X = np.vstack([A.features, B.features])
    y = np.concatenate([A.targets[:, 0], B.targets[:, 0]])
    np.testing.assert_allclose(theta.values, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-9)


def test_single_head_accuracy_ties_go_to_smallest_class():
    m = LinearFeatureMap(2, num_outputs=3)
    ds = Dataset.classification(np.ones((2, 2)), [0, 1], 3)
    assert single_head_accuracy(m, np.zeros(6), [ds]) == 0.5
    with pytest.raises(InvalidArgumentError):
        single_head_accuracy(m, np.zeros(6), [])


def test_pooled_mse():
    m = LinearFeatureMap(1)
    ds = Dataset.regression(np.ones((2, 1)), [1.0, 3.0])
    assert pooled_mse(m, np.array([1.0]), [ds]) == pytest.approx(2.0)


def _class_tasks(seed=0, d=6, n=60):
    rng = np.random.default_rng(seed)
    tasks = []
    for pair in ((0, 1), (2, 3)):
        labels = np.array(pair)[rng.integers(0, 2, n)]
        X = rng.standard_normal((n, d)) + 2.0 * np.eye(d)[labels % d]
        tasks.append(Dataset.classification(X, labels, 4))
    return tasks


@pytest.mark.parametrize("variant", [Variant.full(), Variant.sketch(20), Variant.ewc(), Variant.l2()])
def test_run_sequence_rows(variant):
    tasks = _class_tasks()
    model = RandomReluFeatures.draw(6, 12, 4, 0)
    res = run_sequence(model, tasks, variant, TrainConfig(max_iters=200))
    assert [r["task_index"] for r in res.rows] == [0, 1]
    assert all(r["metric"] == "accuracy" and 0 <= r["value"] <= 1 for r in res.rows)
    assert res.rows[-1]["memory_cost"] == res.state.memory_floats()
    assert res.rows[0]["method"] == variant.name


def test_run_sequence_single_task_identical_across_variants():
    tasks = _class_tasks()[:1]
    model = RandomReluFeatures.draw(6, 12, 4, 0)
    vals = {run_sequence(model, tasks, v, TrainConfig(max_iters=100)).rows[0]["value"]
            for v in (Variant.full(), Variant.sketch(5), Variant.ewc(), Variant.l2())}
    assert len(vals) == 1


def test_run_joint_sequence_and_group_scales():
    tasks = _class_tasks()
    model = TwoLayerRelu.experimental(6, 5, 4)
    joint = run_joint_sequence(model, tasks, TrainConfig(max_iters=50))
    assert joint.method == "all-data" and len(joint.rows) == 2
    res = run_sequence(model, tasks, Variant.ewc(), TrainConfig(max_iters=50), group_scales={"b1": 3.0})
    assert res.state.group_scales is not None
    with pytest.raises(InvalidArgumentError):
        run_sequence(model, [], Variant.ewc(), TrainConfig())


def test_target_width_mismatch():
    with pytest.raises(InvalidArgumentError):
        train_first_task(LinearFeatureMap(5, num_outputs=2), _regression(), TrainConfig())
