import numpy as np
import pytest

from sketchcl.errors import InvalidArgumentError, SingularGramError
from sketchcl.models import ntk_gram
from sketchcl.tasks import unit_sphere_points
from sketchcl.theory.ntk import (clipped_l1, min_eigenvalue, ntk_complexity,
                                ntk_monte_carlo_check, ntk_risk_bound_rhs)


@pytest.mark.parametrize("n", [1, 3, 10])
def test_complexity_identity(n):
    assert ntk_complexity(np.ones(2 * n), np.eye(2 * n)) == pytest.approx(np.sqrt(2))


def test_complexity_zero_targets():
    assert ntk_complexity(np.zeros(4), np.eye(4)) == 0.0


def test_complexity_two_by_two():
    K = np.array([[0.5, 0.25], [0.25, 0.5]])
    assert ntk_complexity([1.0, 1.0], K, n=1) == pytest.approx(np.sqrt(8 / 3))


def test_singular_gram():
    with pytest.raises(SingularGramError):
        ntk_complexity([1.0, 1.0], np.ones((2, 2)))
    with pytest.raises(SingularGramError):
        ntk_risk_bound_rhs([1.0, 1.0], np.ones((2, 2)), 1.0, 10)


def test_gram_validation():
    with pytest.raises(InvalidArgumentError):
        ntk_complexity([1.0, 1.0], np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        ntk_complexity([1.0], np.eye(2))
    with pytest.raises(InvalidArgumentError):
        ntk_risk_bound_rhs([1.0, 1.0], np.eye(2), 1.0, 0)


def _instance(n=6, d=4, seed=0):
    X = unit_sphere_points(2 * n, d, seed)
    y = X @ np.eye(d)[0]
    return y, ntk_gram(X)


def test_infinite_sketch_limit():
    y, K = _instance()
    assert ntk_risk_bound_rhs(y, K, 3.0, np.inf) == pytest.approx(2 * ntk_complexity(y, K) + 3 / np.sqrt(6))


def test_doubling_s_scales_last_term():
    y, K = _instance()
    base = ntk_risk_bound_rhs(y, K, 3.0, np.inf)
    t1 = ntk_risk_bound_rhs(y, K, 3.0, 50) - base
    t2 = ntk_risk_bound_rhs(y, K, 3.0, 100) - base
    assert t2 == pytest.approx(t1 / np.sqrt(2), rel=1e-12)


def test_hand_computation():
    K = np.array([[1.0, 0.0], [0.0, 0.5]])
    y = np.array([1.0, 1.0])
    # n=1: y^T K^-1 y = 3; alpha = 0.5; ||K||_F = sqrt(1.25)
    expected = 2 * np.sqrt(3) + 3 + (10 * 2.0 + np.sqrt(1.25)) / (2.0 * 0.25)
    assert ntk_risk_bound_rhs(y, K, 2.0, 4) == pytest.approx(expected, rel=1e-12)
    assert min_eigenvalue(K) == 0.5


def test_rhs_monotone_in_s_and_n():
    y, K = _instance()
    by_s = [ntk_risk_bound_rhs(y, K, 3.0, s) for s in (1, 4, 16, 64, 256)]
    assert np.all(np.diff(by_s) <= 0)
    alpha = min_eigenvalue(K)
    by_n = [ntk_risk_bound_rhs(y, K, 3.0, 20, alpha=alpha, n=n) for n in (6, 12, 24, 48)]
    assert np.all(np.diff(by_n) <= 0)


def test_monte_carlo_small_width():
    rep = ntk_monte_carlo_check(d=5, k=2000, num_pairs=5, seed=1)
    assert rep.passed and rep.tolerance == pytest.approx(5 / np.sqrt(2000))
    assert np.all(np.abs(rep.analytic) <= 0.5)


def test_clipped_l1():
    np.testing.assert_array_equal(clipped_l1([0.0, 3.0, -0.25], [0.5, 0.0, 0.0]), [0.5, 1.0, 0.25])
