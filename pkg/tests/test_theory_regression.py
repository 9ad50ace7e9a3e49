import numpy as np
import pytest

from sketchcl.errors import InvalidArgumentError
from sketchcl.tasks import gaussian_linear_task
from sketchcl.theory.regression import (joint_estimate, multitask_accumulation,
                                        regression_scaling_check, sequential_rsj, task_parameters)


def _identical_tasks(d=10, n=500, sigma=0.0):
    theta = task_parameters(d, [1.0], 0)[0]
    return theta, [gaussian_linear_task(theta, sigma, n, k) for k in range(2)]


def test_noiseless_joint_is_exact():
    theta, tasks = _identical_tasks()
    assert np.linalg.norm(joint_estimate(tasks) - theta) <= 1e-3 * np.linalg.norm(theta)


@pytest.mark.parametrize("s", [10, 20, 80, None])
def test_identical_noiseless_tasks_no_conflict(s):
    theta, tasks = _identical_tasks()
    est = sequential_rsj(tasks, s, seed=1)[-1]
    assert np.linalg.norm(est - theta) <= 1e-3


def test_full_penalty_equals_joint_for_two_tasks():
    thetas = task_parameters(6, (1.0, 2.0), 3)
    tasks = [gaussian_linear_task(th, 0.3, 80, k) for k, th in enumerate(thetas)]
    np.testing.assert_allclose(sequential_rsj(tasks, None, 0)[-1], joint_estimate(tasks), atol=1e-10)


def test_task_parameters_norms():
    out = task_parameters(5, (1.0, 3.0), 0)
    assert [np.linalg.norm(v) for v in out] == pytest.approx([1.0, 3.0])


def test_scaling_slopes_small_grid():
    rep = regression_scaling_check(d=5, n_grid=(50, 200, 800, 3200), s_grid=(5, 20, 80, 320),
                                   seeds=range(6))
    assert rep.joint_slope == pytest.approx(-0.5, abs=0.15)
    assert rep.sketch_slope == pytest.approx(-0.5, abs=0.15)
    assert np.all(np.diff(rep.sketch_deviation) < 0)
    assert len(rep.rows()) == 8


def test_scaling_rejects_small_n():
    with pytest.raises(InvalidArgumentError):
        regression_scaling_check(d=10, n_grid=(50, 100))


def test_accumulation_report():
    rep = multitask_accumulation(d=5, n=100, s=10, num_tasks=4, seeds=range(3))
    assert rep.gaps[0] == 0.0
    assert np.all(rep.gaps[1:] > 0)
    assert [r["task_index"] for r in rep.rows()] == [0, 1, 2, 3]
    with pytest.raises(InvalidArgumentError):
        multitask_accumulation(num_tasks=1)


def test_accumulation_gap_shrinks_with_sketch_size():
    small = multitask_accumulation(d=5, n=200, s=5, num_tasks=3, seeds=range(4))
    large = multitask_accumulation(d=5, n=200, s=100, num_tasks=3, seeds=range(4))
    assert np.all(large.gaps[1:] < small.gaps[1:])
