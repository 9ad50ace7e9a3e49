"""Partially sketched least squares: gradient descent recursions, deviation
bounds for sketched vs. unsketched iterates, and the sketch concentration
bound on ``||J^T (I - S^T S) z||``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DegenerateRankError, DivergenceError, InvalidArgumentError
from ..rng import make_rng

DEVIATION_CONSTANT = 8.0


def partially_sketched_gd(J_A, J_B, y_B, theta_A, S, eta, t, theta0=None):
    """Iterates of ``theta <- theta - eta (J^T P J theta - J^T P y)``.

    ``J = [J_A; J_B]``, ``P = diag(S^T S, I)`` and ``y = [J_A theta_A; y_B]``.
    ``S=None`` means no sketch (``P = I``). Returns an array (t+1, p) whose
    first row is ``theta0`` (zero by default).
    """
    J_A = np.atleast_2d(np.asarray(J_A, dtype=float))
    J_B = np.atleast_2d(np.asarray(J_B, dtype=float))
    y_B = np.asarray(y_B, dtype=float).ravel()
    theta_A = np.asarray(theta_A, dtype=float).ravel()
    nA, p = J_A.shape
    if J_B.shape[1] != p or y_B.size != J_B.shape[0] or theta_A.size != p:
        raise InvalidArgumentError("inconsistent dimensions")
    if not eta > 0:
        raise InvalidArgumentError("stepsize must be positive")
    J = np.vstack([J_A, J_B])
    y = np.concatenate([J_A @ theta_A, y_B])
    P = np.eye(J.shape[0])
    if S is not None:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[1] != nA:
            raise InvalidArgumentError("sketch must have as many columns as J_A has rows")
        P[:nA, :nA] = S.T @ S
    H = J.T @ P @ J
    b = J.T @ P @ y
    theta = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=float).ravel().copy()
    out = np.empty((int(t) + 1, p))
    out[0] = theta
    for i in range(int(t)):
        theta = theta - eta * (H @ theta - b)
        if not np.all(np.isfinite(theta)) or np.abs(theta).max() > 1e12:
            raise DivergenceError(f"sketched gradient descent diverged with stepsize {eta:.6g}")
        out[i + 1] = theta
    return out


def spectral_quantities(J_A, J_B, y_B, theta_A, r):
    """SVD-derived quantities of the stacked problem used by the deviation bounds."""
    J = np.vstack([J_A, J_B])
    y = np.concatenate([J_A @ theta_A, y_B])
    U, sv, _ = np.linalg.svd(J, full_matrices=False)
    if r < 1 or r > sv.size:
        raise InvalidArgumentError(f"r must lie in [1, {sv.size}]")
    sigma_r = sv[r - 1]
    if sigma_r <= sv[0] * max(J.shape) * np.finfo(float).eps:
        raise DegenerateRankError(f"sigma_{r} is zero to working precision")
    fro_A = float(np.linalg.norm(J_A))
    op_A = float(np.linalg.norm(J_A, 2)) if fro_A > 0 else 0.0
    return {
        "sigma_max": float(sv[0]), "sigma_min": float(sv[-1]), "sigma_r": float(sigma_r),
        "Ur_y": float(np.linalg.norm(U[:, :r].T @ y)),
        "Un_y": float(np.linalg.norm(U[:, r:].T @ y)),
        "y_norm": float(np.linalg.norm(y)),
        "fro_A": fro_A, "op_A": op_A,
    }


def failure_allowance(fro, op, t=1):
    """``4 t exp(-||J||_F^2 / (2 ||J||^2))``; zero for a zero matrix."""
    if fro == 0:
        return 0.0
    return 4.0 * t * float(np.exp(-fro ** 2 / (2.0 * op ** 2)))


def early_condition(q, eta, t):
    """``(1 - eta s_min^2)^t >= 1 - (s_min^2 / s_r^2) ||U_r^T y|| / ||U_n^T y||``."""
    smin2, sr2 = q["sigma_min"] ** 2, q["sigma_r"] ** 2
    if q["Un_y"] == 0:
        return True
    rhs = 1.0 - smin2 / sr2 * q["Ur_y"] / q["Un_y"]
    return (1.0 - eta * smin2) ** t >= rhs


def largest_t_for_condition(q, eta, t_cap=10_000):
    """Largest iteration count satisfying the early-iteration condition (capped)."""
    smin2, sr2 = q["sigma_min"] ** 2, q["sigma_r"] ** 2
    if q["Un_y"] == 0 or smin2 == 0:
        return t_cap
    rhs = 1.0 - smin2 / sr2 * q["Ur_y"] / q["Un_y"]
    if rhs <= 0:
        return t_cap
    t = int(np.floor(np.log(rhs) / np.log1p(-eta * smin2)))
    return max(0, min(t, t_cap))


def early_bound(q, s):
    """``8 ||J_A||_F / (sqrt(s) sigma_r^2) * ||U_r^T y||``."""
    return DEVIATION_CONSTANT * q["fro_A"] / (np.sqrt(s) * q["sigma_r"] ** 2) * q["Ur_y"]


def late_scale(q, r, s):
    """``sigma_max / sigma_r^2 * sqrt(r / s) * ||r_0||`` (bound without its constant)."""
    return q["sigma_max"] / q["sigma_r"] ** 2 * np.sqrt(r / s) * q["y_norm"]


@dataclass
class SketchDeviationReport:
    s: int
    t: int
    r: int
    eta: float
    deviations: np.ndarray
    sup_deviations: np.ndarray
    reference_norm: float
    early_bound: float
    early_condition_satisfied: bool
    late_scale: float
    failure_allowance: float
    violation_frequency: float
    passed: bool
    quantities: dict = field(default_factory=dict)

    @property
    def probability_target(self):
        return max(0.0, 1.0 - self.failure_allowance)

    @property
    def mean_deviation(self):
        return float(np.mean(self.deviations))

    @property
    def late_ratio(self):
        """Mean sup-over-t deviation divided by the constant-free late-iteration bound."""
        if self.late_scale == 0:
            return 0.0
        return float(np.mean(self.sup_deviations) / self.late_scale)


def sketch_deviation_check(J_A, J_B, y_B, theta_A, s, r, eta, t, num_trials=200, seed=0,
                   bound_scale=1.0, slack=0.02):
    """Monte-Carlo check of the sketched-vs-unsketched iterate deviation bound.

    For each trial a fresh ``S`` (s x n_A, iid N(0, 1/s)) is drawn and both
    recursions are run from zero for ``t`` steps. The check passes when the
    fraction of trials exceeding the early-iteration bound is at most the allowed
    failure probability plus ``slack``. ``bound_scale`` multiplies the bound
    (values other than 1 are for negative controls only).
    """
    J_A = np.atleast_2d(np.asarray(J_A, dtype=float))
    J_B = np.atleast_2d(np.asarray(J_B, dtype=float))
    y_B = np.asarray(y_B, dtype=float).ravel()
    theta_A = np.asarray(theta_A, dtype=float).ravel()
    if num_trials < 1:
        raise InvalidArgumentError("num_trials must be >= 1")
    q = spectral_quantities(J_A, J_B, y_B, theta_A, r)
    reference = partially_sketched_gd(J_A, J_B, y_B, theta_A, None, eta, t)
    rng = make_rng(seed, 31)
    devs, sups = np.empty(num_trials), np.empty(num_trials)
    for k in range(num_trials):
        S = rng.standard_normal((s, J_A.shape[0])) / np.sqrt(s)
        its = partially_sketched_gd(J_A, J_B, y_B, theta_A, S, eta, t)
        gaps = np.linalg.norm(its - reference, axis=1)
        devs[k], sups[k] = gaps[-1], gaps.max()
    bound = bound_scale * early_bound(q, s)
    allowance = failure_allowance(q["fro_A"], q["op_A"], t)
    freq = float(np.mean(devs > bound))
    cond = early_condition(q, eta, t)
    return SketchDeviationReport(
        s=int(s), t=int(t), r=int(r), eta=float(eta), deviations=devs, sup_deviations=sups,
        reference_norm=float(np.linalg.norm(reference[-1])), early_bound=float(bound),
        early_condition_satisfied=bool(cond), late_scale=float(late_scale(q, r, s)),
        failure_allowance=allowance, violation_frequency=freq,
        passed=bool(cond and freq <= allowance + slack), quantities=q)


def spectrum_instance(n_A, n_B, p, singular_values, seed, noise=0.0):
    """``J = U diag(sv) V^T`` split into task blocks, with a compatible target.

    ``theta_A`` and ``theta_B`` are standard normal; ``y_B = J_B theta_B`` plus
    ``noise``-scaled Gaussian noise.
    """
    rng = make_rng(seed, 37)
    sv = np.asarray(singular_values, dtype=float)
    n = n_A + n_B
    U, _ = np.linalg.qr(rng.standard_normal((n, sv.size)))
    V, _ = np.linalg.qr(rng.standard_normal((p, sv.size)))
    J = (U * sv) @ V.T
    J_A, J_B = J[:n_A], J[n_A:]
    theta_A = rng.standard_normal(p)
    theta_B = rng.standard_normal(p)
    y_B = J_B @ theta_B + noise * rng.standard_normal(n_B)
    return J_A, J_B, y_B, theta_A


def reference_instance(seed=0):
    """n=200 (100 per task), p=50, ten singular values 10 and forty 0.1."""
    sv = np.concatenate([np.full(10, 10.0), np.full(40, 0.1)])
    return spectrum_instance(100, 100, 50, sv, seed, noise=0.1)


def choose_early_iterations(J_A, J_B, y_B, theta_A, r, eta, max_allowance=0.5, t_cap=10_000):
    """Largest ``t`` meeting the early-iteration condition whose failure allowance stays below ``max_allowance``."""
    q = spectral_quantities(J_A, J_B, y_B, theta_A, r)
    t = largest_t_for_condition(q, eta, t_cap)
    per_step = failure_allowance(q["fro_A"], q["op_A"], 1)
    if per_step > 0:
        t = min(t, int(np.floor(max_allowance / per_step)))
    return max(1, t)


@dataclass
class SlopeReport:
    sizes: np.ndarray
    values: np.ndarray
    slope: float
    target: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.slope - self.target) <= self.tolerance


def loglog_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def deviation_scaling(s_grid=(20, 40, 80, 160, 320), r=10, n_A=100, n_B=100, p=50, t=300,
                    trials=30, seed=0, tolerance=0.15, step_factor=0.2):
    """Mean sup-over-t deviation for an exactly rank-r problem, and its log-log slope in s.

    The stepsize is ``step_factor / sigma_max^2``; it has to stay stable for
    the sketched recursion too, whose curvature a small sketch can inflate
    several-fold.
    """
    J_A, J_B, y_B, theta_A = spectrum_instance(n_A, n_B, p, np.full(r, 10.0), seed)
    q = spectral_quantities(J_A, J_B, y_B, theta_A, r)
    eta = step_factor / q["sigma_max"] ** 2
    reference = partially_sketched_gd(J_A, J_B, y_B, theta_A, None, eta, t)
    rng = make_rng(seed, 41)
    means = []
    for s in s_grid:
        sups = []
        for _ in range(trials):
            S = rng.standard_normal((s, n_A)) / np.sqrt(s)
            its = partially_sketched_gd(J_A, J_B, y_B, theta_A, S, eta, t)
            sups.append(np.linalg.norm(its - reference, axis=1).max())
        means.append(np.mean(sups))
    means = np.asarray(means)
    return SlopeReport(np.asarray(s_grid), means, loglog_slope(s_grid, means), -0.5, tolerance)


@dataclass
class ConcentrationReport:
    s: int
    num_draws: int
    bound: float
    allowance: float
    violation_frequency: float
    norms: np.ndarray
    passed: bool


def sketch_concentration_check(J, z, s, num_draws=500, seed=0, bound_scale=1.0, slack=0.02):
    """How often ``||J^T (I - S^T S) z|| > 8 ||J||_F ||z|| / sqrt(s)`` over fresh sketches.

    ``J`` is m x p and ``z`` has length m; ``S`` is s x m.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    if z.size != J.shape[0]:
        raise InvalidArgumentError("z must have as many entries as J has rows")
    rng = make_rng(seed, 43)
    fro, op = float(np.linalg.norm(J)), float(np.linalg.norm(J, 2))
    bound = bound_scale * DEVIATION_CONSTANT * fro * np.linalg.norm(z) / np.sqrt(s)
    norms = np.empty(num_draws)
    Jtz = J.T @ z
    for k in range(num_draws):
        S = rng.standard_normal((s, J.shape[0])) / np.sqrt(s)
        norms[k] = np.linalg.norm(Jtz - (S @ J).T @ (S @ z))
    allowance = failure_allowance(fro, op, 1)
    freq = float(np.mean(norms > bound))
    return ConcentrationReport(int(s), int(num_draws), float(bound), allowance, freq, norms,
                               freq <= allowance + slack)
