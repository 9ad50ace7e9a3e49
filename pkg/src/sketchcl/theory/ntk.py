"""Kernel quantities of the two-layer ReLU net in the lazy regime, and a
finite-width check of the sketched-penalty risk bound."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, SingularGramError
from ..models import Dataset, TwoLayerRelu, ntk_gram
from ..regularizers import PenaltyState, Variant, accumulate, approx_jacobian_for, sketch_seed
from ..rng import DATA_STREAM, INIT_STREAM, derive_seed, make_rng
from ..tasks import unit_sphere_points
from ..trainer import TrainConfig, train_first_task, train_next_task

SINGULAR_TOL = 1e-12


def _check_gram(K):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape[0] != K.shape[1]:
        raise InvalidArgumentError("Gram matrix must be square")
    if not np.allclose(K, K.T, atol=1e-10 * max(1.0, np.abs(K).max())):
        raise InvalidArgumentError("Gram matrix must be symmetric")
    return K


def min_eigenvalue(K):
    return float(np.linalg.eigvalsh(_check_gram(K))[0])


def ntk_complexity(y, K, n=None):
    """``sqrt(y^T K^{-1} y / n)`` with ``n = len(y) / 2`` unless given."""
    K = _check_gram(K)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != K.shape[0]:
        raise InvalidArgumentError("y length must match the Gram matrix")
    alpha = min_eigenvalue(K)
    if alpha <= SINGULAR_TOL:
        raise SingularGramError(f"Gram matrix is singular (min eigenvalue {alpha:.3g})")
    n = y.size / 2 if n is None else n
    if not np.any(y):
        return 0.0
    quad = float(y @ np.linalg.solve(K, y))
    return float(np.sqrt(max(quad, 0.0) / n))


def ntk_risk_bound_rhs(y, K, fro_J_A, s, alpha=None, n=None):
    """``2 sqrt(y^T K^-1 y / n) + 3 / sqrt(n) + (10 ||J_A||_F + ||K||_F / sqrt(n)) / (sqrt(s) alpha^2)``.

    ``alpha`` defaults to the smallest eigenvalue of ``K``; ``s=inf`` drops the
    sketch term.
    """
    K = _check_gram(K)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size / 2 if n is None else n
    if alpha is None:
        alpha = min_eigenvalue(K)
    if alpha <= SINGULAR_TOL:
        raise SingularGramError(f"Gram matrix is singular (min eigenvalue {alpha:.3g})")
    if not s > 0:
        raise InvalidArgumentError("s must be positive")
    base = 2.0 * ntk_complexity(y, K, n) + 3.0 / np.sqrt(n)
    if np.isinf(s):
        return float(base)
    pert = (10.0 * fro_J_A + np.linalg.norm(K) / np.sqrt(n)) / (np.sqrt(s) * alpha ** 2)
    return float(base + pert)


@dataclass
class NtkMonteCarloReport:
    k: int
    empirical: np.ndarray
    analytic: np.ndarray
    tolerance: float

    @property
    def max_error(self):
        return float(np.max(np.abs(self.empirical - self.analytic)))

    @property
    def passed(self):
        return self.max_error <= self.tolerance


def ntk_monte_carlo_check(d=10, k=10_000, num_pairs=10, seed=0):
    """Gradient inner products of a random-init theoretical net vs. :func:`ntk_gram`.

    Tolerance is ``5 / sqrt(k)``.
    """
    model = TwoLayerRelu.theoretical(d, k)
    theta = model.init_params(make_rng(seed, INIT_STREAM))
    X = unit_sphere_points(2 * num_pairs, d, seed)
    J = model.jacobian(theta, X)
    emp, ana = np.empty(num_pairs), np.empty(num_pairs)
    for i in range(num_pairs):
        a, b = 2 * i, 2 * i + 1
        emp[i] = J[a] @ J[b]
        ana[i] = ntk_gram(X[[a, b]])[0, 1]
    return NtkMonteCarloReport(k, emp, ana, 5.0 / np.sqrt(k))


@dataclass
class NtkRiskReport:
    n: int
    k: int
    s: int
    alpha: float
    complexity: float
    fro_J_A: float
    risk: float
    rhs: float
    train_risk: float

    @property
    def passed(self):
        return self.risk <= self.rhs


def clipped_l1(z, y):
    return np.minimum(np.abs(np.asarray(z) - np.asarray(y)), 1.0)


def ntk_risk_check(d=10, k=20_000, n=100, s=200, num_test=2000, iters=2000, seed=0):
    """Train the theoretical net on task A, then with a sketched penalty on task B.

    Inputs are uniform on the sphere, targets ``y_T = <x, beta_T>`` for unit
    ``beta_T``. Risk is the mean of ``min(|f(x) - y|, 1)`` over fresh samples
    from both tasks; ``||J_A||_F`` is taken at initialization.
    """
    rng = make_rng(seed, DATA_STREAM, 7)
    betas = [b / np.linalg.norm(b) for b in rng.standard_normal((2, d))]
    X_train = [unit_sphere_points(n, d, derive_seed(seed, 11, t)) for t in range(2)]
    X_test = [unit_sphere_points(num_test, d, derive_seed(seed, 13, t)) for t in range(2)]
    train = [Dataset.regression(X, X @ b) for X, b in zip(X_train, betas)]

    model = TwoLayerRelu.theoretical(d, k)
    theta0 = model.init_params(make_rng(seed, INIT_STREAM))
    cfg = TrainConfig(max_iters=iters, lam=1.0, grad_tol=1e-6, seed=seed)
    theta_A, _ = train_first_task(model, train[0], cfg, theta0)
    variant = Variant.sketch(s)
    K_A = approx_jacobian_for(model, theta_A, train[0].features, variant, sketch_seed(seed, 0))
    state = accumulate(PenaltyState.empty(variant, model.param_count), K_A, theta_A)
    theta, _ = train_next_task(model, train[1], state, cfg)

    risk = np.mean([np.mean(clipped_l1(model.predict(theta, X)[:, 0], X @ b))
                    for X, b in zip(X_test, betas)])
    train_risk = np.mean([np.mean(clipped_l1(model.predict(theta, ds.features)[:, 0], ds.targets[:, 0]))
                          for ds in train])
    X_all = np.vstack(X_train)
    y_all = np.concatenate([ds.targets[:, 0] for ds in train])
    K = ntk_gram(X_all)
    alpha = min_eigenvalue(K)
    fro = float(np.sqrt(np.sum(model.jacobian_sq_colsums(theta0, X_train[0]))))
    rhs = ntk_risk_bound_rhs(y_all, K, fro, s, alpha, n)
    return NtkRiskReport(n, k, s, alpha, ntk_complexity(y_all, K, n), fro, float(risk), rhs,
                         float(train_risk))
