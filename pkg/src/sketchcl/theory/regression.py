"""Two-task (and multi-task) Gaussian linear regression: joint least squares
versus the sketched-penalty estimator, and how their errors scale in n and s.

Both estimators are computed at their gradient-descent fixed point, i.e. by
solving the normal equations; with a stepsize below ``2 / lambda_max`` the
trainer converges to the same point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError
from ..regularizers import SketchMatrix, sketch_seed
from ..rng import FEATURE_STREAM, derive_seed, make_rng
from ..tasks import gaussian_linear_task
from .sketching import loglog_slope


def _lstsq(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def task_parameters(d, norms, seed):
    """One random direction per task, scaled to the requested norms."""
    rng = make_rng(seed, FEATURE_STREAM)
    out = []
    for nrm in norms:
        v = rng.standard_normal(d)
        out.append(nrm * v / np.linalg.norm(v))
    return out


def _task_data(thetas, sigma, n, seed):
    return [gaussian_linear_task(th, sigma, n, derive_seed(seed, 3, t, n))
            for t, th in enumerate(thetas)]


def sequential_rsj(tasks, s, seed, lam=1.0):
    """Closed-form sequential estimates; entry ``k`` is the estimate after task ``k``.

    Task 0 is plain least squares. Each later task minimises its own squared
    loss plus ``(lam/2) sum_j ||S_j X_j (theta - theta_prev)||^2``.
    ``s=None`` keeps the full Jacobians.
    """
    thetas = [_lstsq(tasks[0].features, tasks[0].targets[:, 0])]
    d = tasks[0].d
    H = np.zeros((d, d))
    for k in range(1, len(tasks)):
        prev = tasks[k - 1]
        if s is None:
            K = prev.features
        else:
            K = SketchMatrix.draw(s, prev.n, sketch_seed(seed, k - 1)).entries @ prev.features
        H = H + K.T @ K
        X, y = tasks[k].features, tasks[k].targets[:, 0]
        thetas.append(np.linalg.solve(X.T @ X + lam * H, X.T @ y + lam * H @ thetas[-1]))
    return thetas


def joint_estimate(tasks):
    X = np.vstack([t.features for t in tasks])
    y = np.concatenate([t.targets[:, 0] for t in tasks])
    return _lstsq(X, y)


@dataclass
class RegressionScalingReport:
    d: int
    sigma: float
    n_grid: np.ndarray
    s_grid: np.ndarray
    joint_error: np.ndarray
    rsj_error: np.ndarray
    sketch_deviation: np.ndarray
    n_for_s: int
    compare_n: int
    compare_s: int
    compare_rsj_error: float
    compare_joint_error: float
    joint_slope: float
    sketch_slope: float

    @property
    def compare_ratio(self):
        return self.compare_rsj_error / self.compare_joint_error

    def passed(self, tol=0.15, ratio=2.0):
        return (abs(self.joint_slope + 0.5) <= tol and abs(self.sketch_slope + 0.5) <= tol
                and self.compare_ratio <= ratio)

    def rows(self):
        out = [{"table": "joint_vs_n", "n": int(n), "s": 0, "error": float(e)}
               for n, e in zip(self.n_grid, self.joint_error)]
        out += [{"table": "rsj_vs_s", "n": self.n_for_s, "s": int(s), "error": float(e),
                 "deviation": float(v)}
                for s, e, v in zip(self.s_grid, self.rsj_error, self.sketch_deviation)]
        return out


def regression_scaling_check(d=10, n_grid=(100, 200, 400, 800, 1600, 3200, 6400),
                             s_grid=(10, 20, 40, 80, 160, 320, 640), norm_A=1.0, norm_B=1.0,
                             sigma=0.5, seeds: Sequence[int] = range(10), n_for_s=None,
                             compare_n=None, compare_s=None):
    """Seed-averaged errors ``||theta - theta*||`` with ``theta* = (theta_A + theta_B) / 2``.

    * joint error against ``n`` (slope target -1/2),
    * sketched-penalty error and its deviation from the joint estimate against
      ``s`` at ``n = n_for_s`` (largest n by default); the slope is fitted on
      the deviation, which isolates the sketch-dominated term,
    * the sketched error at ``s = compare_s`` (10 d by default) against the joint
      error at ``n = compare_n`` (smallest n by default).
    """
    n_grid = np.asarray(sorted(n_grid))
    s_grid = np.asarray(sorted(s_grid))
    seeds = list(seeds)
    if not seeds:
        raise InvalidArgumentError("need at least one seed")
    if n_grid.min() < 10 * d:
        raise InvalidArgumentError("n grid must satisfy n >= 10 d")
    n_for_s = int(n_grid.max()) if n_for_s is None else int(n_for_s)
    compare_n = int(n_grid.min()) if compare_n is None else int(compare_n)
    compare_s = 10 * d if compare_s is None else int(compare_s)

    joint = np.zeros(n_grid.size)
    rsj = np.zeros(s_grid.size)
    dev = np.zeros(s_grid.size)
    cmp_rsj = cmp_joint = 0.0
    for seed in seeds:
        thA, thB = task_parameters(d, (norm_A, norm_B), seed)
        target = 0.5 * (thA + thB)
        for i, n in enumerate(n_grid):
            joint[i] += np.linalg.norm(joint_estimate(_task_data((thA, thB), sigma, n, seed)) - target)
        tasks = _task_data((thA, thB), sigma, n_for_s, seed)
        jt = joint_estimate(tasks)
        for i, s in enumerate(s_grid):
            est = sequential_rsj(tasks, int(s), derive_seed(seed, int(s)))[-1]
            rsj[i] += np.linalg.norm(est - target)
            dev[i] += np.linalg.norm(est - jt)
        tasks = _task_data((thA, thB), sigma, compare_n, seed)
        cmp_joint += np.linalg.norm(joint_estimate(tasks) - target)
        cmp_rsj += np.linalg.norm(sequential_rsj(tasks, compare_s, seed)[-1] - target)
    k = len(seeds)
    joint, rsj, dev = joint / k, rsj / k, dev / k
    return RegressionScalingReport(
        d=d, sigma=float(sigma), n_grid=n_grid, s_grid=s_grid, joint_error=joint,
        rsj_error=rsj, sketch_deviation=dev, n_for_s=n_for_s, compare_n=compare_n,
        compare_s=compare_s, compare_rsj_error=cmp_rsj / k, compare_joint_error=cmp_joint / k,
        joint_slope=loglog_slope(n_grid, joint), sketch_slope=loglog_slope(s_grid, dev))


@dataclass
class AccumulationReport:
    num_tasks: int
    n: int
    s: int
    gaps: np.ndarray
    rsj_error: np.ndarray
    joint_error: np.ndarray

    @property
    def nondecreasing(self):
        return bool(np.all(np.diff(self.gaps) >= -1e-12))

    def rows(self):
        return [{"table": "accumulation", "task_index": k, "n": self.n, "s": self.s,
                 "gap": float(g), "rsj_error": float(e), "joint_error": float(j)}
                for k, (g, e, j) in enumerate(zip(self.gaps, self.rsj_error, self.joint_error))]


def multitask_accumulation(d=10, n=400, s=20, num_tasks=5, sigma=0.5, seeds=range(10)):
    """Seed-averaged gap ``||theta_rsj_k - theta_joint_k||`` after each task ``k``.

    The joint estimate after task ``k`` uses tasks ``0..k``; errors are against
    the mean of the task parameters seen so far.
    """
    if num_tasks < 2:
        raise InvalidArgumentError("need at least two tasks")
    seeds = list(seeds)
    gaps = np.zeros(num_tasks)
    errs = np.zeros(num_tasks)
    jerrs = np.zeros(num_tasks)
    for seed in seeds:
        thetas = task_parameters(d, [1.0] * num_tasks, seed)
        tasks = _task_data(thetas, sigma, n, seed)
        seq = sequential_rsj(tasks, s, seed)
        for k in range(num_tasks):
            jt = joint_estimate(tasks[:k + 1])
            target = np.mean(thetas[:k + 1], axis=0)
            gaps[k] += np.linalg.norm(seq[k] - jt)
            errs[k] += np.linalg.norm(seq[k] - target)
            jerrs[k] += np.linalg.norm(jt - target)
    m = len(seeds)
    return AccumulationReport(num_tasks, n, s, gaps / m, errs / m, jerrs / m)
