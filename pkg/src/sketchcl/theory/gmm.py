"""Two-task Gaussian mixture model: population losses, closed-form EWC and L2
solutions, misclassification risk and lambda sweeps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from ..errors import InvalidArgumentError

EWC, L2, TASK_A, JOINT = "ewc", "l2", "taskA-only", "joint-optimal"
DEFAULT_GRID = np.logspace(-4, 4, 41)
FAILURE_SIGMAS = (0.2, 0.1, 0.05, 0.02)


def _vec(x):
    return np.asarray(x, dtype=float).ravel()


def gmm_population_loss(theta, mu, sigma):
    """``(<theta, mu> - 1)^2 + sigma^2 ||theta||^2``."""
    theta, mu = _vec(theta), _vec(mu)
    return float((theta @ mu - 1.0) ** 2 + sigma ** 2 * (theta @ theta))


def gmm_population_grad(theta, mu, sigma):
    theta, mu = _vec(theta), _vec(mu)
    return 2.0 * (theta @ mu - 1.0) * mu + 2.0 * sigma ** 2 * theta


def gmm_task_minimizer(mu, sigma):
    """``mu / (1 + sigma^2)`` for a unit-norm mean."""
    return _vec(mu) / (1.0 + sigma ** 2)


def ewc_diagonal(mu_A, sigma):
    """Diagonal of ``sigma^2 I + mu_A mu_A^T``."""
    return sigma ** 2 + _vec(mu_A) ** 2


def gmm_risk(theta, mus, sigma):
    """Average misclassification probability ``Phi(-<theta, mu_T> / (||theta|| sigma))``."""
    theta = _vec(theta)
    nrm = np.linalg.norm(theta)
    if nrm == 0:
        raise InvalidArgumentError("risk is undefined for theta = 0")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    return float(np.mean(ndtr(-(mus @ theta) / (nrm * sigma))))


@dataclass
class GmmSolution:
    theta: np.ndarray
    lam: Optional[float]
    method: str
    risk_AB: float


def _solution(theta, lam, method, mu_A, mu_B, sigma):
    return GmmSolution(theta, lam, method, gmm_risk(theta, [mu_A, mu_B], sigma))


def _check(mu_A, mu_B, sigma, lam):
    mu_A, mu_B = _vec(mu_A), _vec(mu_B)
    if mu_A.shape != mu_B.shape:
        raise InvalidArgumentError("means must have the same dimension")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    if not lam >= 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    return mu_A, mu_B


def ewc_theta(mu_A, mu_B, sigma, lam):
    """Solve ``(sigma^2 I + mu_B mu_B^T + lam D_A) theta = mu_B + lam D_A mu_A`` by Sherman-Morrison."""
    mu_A, mu_B = _check(mu_A, mu_B, sigma, lam)
    D_A = ewc_diagonal(mu_A, sigma)
    dinv = 1.0 / (sigma ** 2 + lam * D_A)
    b = mu_B + lam * D_A * mu_A
    u = dinv * mu_B
    x = dinv * b
    return x - u * ((mu_B @ x) / (1.0 + mu_B @ u))


def l2_theta(mu_A, mu_B, sigma, lam):
    """``(1/(s2+lam)) * ((s2 + lam - lam <mu_A, mu_B>) / (1 + s2 + lam) mu_B + lam mu_A)``."""
    mu_A, mu_B = _check(mu_A, mu_B, sigma, lam)
    s2 = sigma ** 2
    coef_B = (s2 + lam - lam * (mu_A @ mu_B)) / (1.0 + s2 + lam)
    return (coef_B * mu_B + lam * mu_A) / (s2 + lam)


def gmm_ewc_solution(mu_A, mu_B, sigma, lam):
    return _solution(ewc_theta(mu_A, mu_B, sigma, lam), lam, EWC, mu_A, mu_B, sigma)


def gmm_l2_solution(mu_A, mu_B, sigma, lam):
    return _solution(l2_theta(mu_A, mu_B, sigma, lam), lam, L2, mu_A, mu_B, sigma)


def joint_optimal_solution(mu_A, mu_B, sigma):
    """Risk-optimal direction ``mu_A + mu_B``."""
    return _solution(_vec(mu_A) + _vec(mu_B), None, JOINT, mu_A, mu_B, sigma)


def task_a_solution(mu_A, mu_B, sigma):
    return _solution(gmm_task_minimizer(mu_A, sigma), None, TASK_A, mu_A, mu_B, sigma)


def ewc_dense(mu_A, mu_B, sigma, lam):
    """Dense direct solve of the EWC normal equations (reference implementation)."""
    mu_A, mu_B = _check(mu_A, mu_B, sigma, lam)
    D_A = np.diag(np.diag(sigma ** 2 * np.eye(mu_A.size) + np.outer(mu_A, mu_A)))
    M = sigma ** 2 * np.eye(mu_A.size) + np.outer(mu_B, mu_B) + lam * D_A
    return np.linalg.solve(M, mu_B + lam * D_A @ mu_A)


def l2_dense(mu_A, mu_B, sigma, lam):
    mu_A, mu_B = _check(mu_A, mu_B, sigma, lam)
    M = (sigma ** 2 + lam) * np.eye(mu_A.size) + np.outer(mu_B, mu_B)
    return np.linalg.solve(M, mu_B + lam * mu_A)


def hypercube_ewc_coefficients(mu_A, mu_B, sigma, lam):
    """Coefficients ``(c_B, c_A)`` with ``theta_EWC = c_B mu_B + c_A mu_A`` for entries ``+-1/sqrt(d)``.

    With ``c = sigma^2 + 1/d`` and ``q = sigma^2 + lam c``:
    ``c_B = (1 - (lam c / q) <mu_A, mu_B>) / (1 + q)`` and ``c_A = lam c / q``.
    """
    mu_A, mu_B = _check(mu_A, mu_B, sigma, lam)
    d = mu_A.size
    if not (np.allclose(np.abs(mu_A), 1 / np.sqrt(d)) and np.allclose(np.abs(mu_B), 1 / np.sqrt(d))):
        raise InvalidArgumentError("hypercube means need entries of magnitude 1/sqrt(d)")
    c = sigma ** 2 + 1.0 / d
    q = sigma ** 2 + lam * c
    c_A = lam * c / q
    c_B = (1.0 - c_A * (mu_A @ mu_B)) / (1.0 + q)
    return float(c_B), float(c_A)


def _theta_for(method, mu_A, mu_B, sigma, lam):
    if method == EWC:
        return ewc_theta(mu_A, mu_B, sigma, lam)
    if method == L2:
        return l2_theta(mu_A, mu_B, sigma, lam)
    raise InvalidArgumentError(f"unknown method {method!r}")


def cosine(a, b):
    a, b = _vec(a), _vec(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class LambdaSweep:
    method: str
    sigma: float
    grid: np.ndarray
    risks: np.ndarray
    lam_star: float
    min_risk: float
    optimal_risk: float
    best_theta: np.ndarray
    best_cosine: float

    @property
    def ratio(self):
        return self.min_risk / self.optimal_risk

    def rows(self):
        return [{"method": self.method, "sigma": self.sigma, "lambda": float(l),
                 "risk": float(r), "ratio": float(r / self.optimal_risk)}
                for l, r in zip(self.grid, self.risks)]


def gmm_lambda_sweep(method, mu_A, mu_B, sigma, lam_grid: Sequence[float] = DEFAULT_GRID,
                     refine=False):
    """Risk over a lambda grid and its minimum relative to ``theta* = mu_A + mu_B``.

    ``refine=True`` polishes the grid minimum with a bounded scalar search in
    ``log(lambda)`` between the neighbouring grid points.
    """
    grid = np.asarray(lam_grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgumentError("lambda grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("lambda grid must be strictly increasing")
    mus = [_vec(mu_A), _vec(mu_B)]

    def risk_at(lam):
        return gmm_risk(_theta_for(method, mu_A, mu_B, sigma, lam), mus, sigma)

    risks = np.array([risk_at(l) for l in grid])
    i = int(np.argmin(risks))
    lam_star, min_risk = float(grid[i]), float(risks[i])
    if refine and grid.size > 1 and grid[0] > 0:
        lo, hi = np.log(grid[max(i - 1, 0)]), np.log(grid[min(i + 1, grid.size - 1)])
        res = minimize_scalar(lambda z: risk_at(np.exp(z)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        if res.fun < min_risk:
            lam_star, min_risk = float(np.exp(res.x)), float(res.fun)
    best = _theta_for(method, mu_A, mu_B, sigma, lam_star)
    opt = mus[0] + mus[1]
    return LambdaSweep(method, float(sigma), grid, risks, lam_star, min_risk,
                       gmm_risk(opt, mus, sigma), best, cosine(best, opt))


def failure_instance_means():
    """Unit-normalised ``(1, -0.8, 0.8)`` and ``(-1, 0.5, -0.8)``."""
    a = np.array([1.0, -0.8, 0.8])
    b = np.array([-1.0, 0.5, -0.8])
    return a / np.linalg.norm(a), b / np.linalg.norm(b)


@dataclass
class FailureSearch:
    sigma: Optional[float]
    ratios: dict

    @property
    def found(self):
        return self.sigma is not None


def failure_sigma_search(mu_A=None, mu_B=None, sigmas=FAILURE_SIGMAS, grid=DEFAULT_GRID,
                         threshold=1.5):
    """Scan ``sigmas`` from largest to smallest; return the first where both
    EWC and L2 stay at least ``threshold`` times the optimal risk on the grid."""
    if mu_A is None or mu_B is None:
        mu_A, mu_B = failure_instance_means()
    ratios = {}
    chosen = None
    for sigma in sorted(sigmas, reverse=True):
        r = {m: gmm_lambda_sweep(m, mu_A, mu_B, sigma, grid).ratio for m in (EWC, L2)}
        ratios[float(sigma)] = r
        if chosen is None and min(r.values()) >= threshold:
            chosen = float(sigma)
    return FailureSearch(chosen, ratios)
