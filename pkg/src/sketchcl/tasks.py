"""Task generators: pixel permutations, class-incremental splits, Gaussian
linear regression and two-class Gaussian mixtures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .models import Dataset
from .rng import DATA_STREAM, PERMUTATION_STREAM, make_rng

IDENTITY = "identity"


@dataclass(frozen=True)
class PermutationSpec:
    permutation: np.ndarray
    seed: object

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise InvalidArgumentError("permutation is not a bijection")
        object.__setattr__(self, "permutation", perm)

    @classmethod
    def draw(cls, d, seed):
        if seed == IDENTITY or seed is None:
            return cls(np.arange(d), IDENTITY)
        return cls(make_rng(seed, PERMUTATION_STREAM).permutation(d), seed)

    def inverse(self):
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.permutation.size)
        return PermutationSpec(inv, ("inverse", self.seed))


def apply_permutation(base: Dataset, spec: PermutationSpec) -> Dataset:
    """Output column ``j`` is input column ``spec.permutation[j]``."""
    if spec.permutation.size != base.d:
        raise InvalidArgumentError("permutation length must equal the feature dimension")
    meta = dict(base.metadata)
    meta["permutation_seed"] = spec.seed
    return Dataset(base.features[:, spec.permutation], base.targets.copy(),
                   None if base.labels is None else base.labels.copy(), base.num_classes, meta)


def permuted_task(base: Dataset, seed) -> Dataset:
    """Reorder every row's columns with one permutation drawn from ``seed``.

    ``seed="identity"`` returns ``base`` itself.
    """
    if seed == IDENTITY:
        return base
    return apply_permutation(base, PermutationSpec.draw(base.d, seed))


def permutation_tasks(base: Dataset, num_tasks: int, seeds=None) -> list:
    """Task 0 is ``base`` unpermuted; task ``t`` uses permutation seed ``seeds[t]``."""
    seeds = list(range(num_tasks)) if seeds is None else list(seeds)
    return [base if t == 0 else permuted_task(base, seeds[t]) for t in range(num_tasks)]


def incremental_split(base: Dataset, pairs: Sequence[Sequence[int]]) -> list:
    """One task per group of classes; targets stay one-hot over all classes."""
    if base.labels is None:
        raise InvalidArgumentError("incremental split needs labels")
    seen = set()
    present = set(np.unique(base.labels).tolist())
    tasks = []
    for group in pairs:
        group = [int(c) for c in group]
        if seen.intersection(group):
            raise InvalidArgumentError(f"class groups overlap at {sorted(seen.intersection(group))}")
        missing = [c for c in group if c not in present]
        if missing:
            raise InvalidArgumentError(f"classes {missing} not present in the base dataset")
        seen.update(group)
        idx = np.flatnonzero(np.isin(base.labels, group))
        task = base.subset(idx)
        task.metadata["classes"] = tuple(group)
        tasks.append(task)
    return tasks


def gaussian_linear_task(theta_T, sigma: float, n: int, seed) -> Dataset:
    """``y = <x, theta_T> + z`` with ``x ~ N(0, I)`` and ``z ~ N(0, sigma^2)``."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if sigma < 0:
        raise InvalidArgumentError("sigma must be nonnegative")
    theta_T = np.asarray(theta_T, dtype=float).ravel()
    rng = make_rng(seed, DATA_STREAM)
    X = rng.standard_normal((n, theta_T.size))
    z = rng.standard_normal(n)
    y = X @ theta_T + sigma * z
    return Dataset.regression(X, y, {"theta": theta_T.copy(), "sigma": sigma})


@dataclass(frozen=True)
class GmmSpec:
    mu: np.ndarray
    sigma2: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if abs(np.linalg.norm(mu) - 1.0) > 1e-10:
            raise InvalidArgumentError("class mean must have unit norm")
        if not self.sigma2 > 0:
            raise InvalidArgumentError("within-class variance must be positive")
        object.__setattr__(self, "mu", mu)

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2))


def gmm_task(spec: GmmSpec, n: int, seed) -> Dataset:
    """Labels ``y = +-1`` uniformly, ``x = y * mu + sigma * g``."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = make_rng(seed, DATA_STREAM)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, spec.mu.size))
    X = y[:, None] * spec.mu + spec.sigma * g
    return Dataset(X, y, y.astype(np.int64), 0, {"mu": spec.mu.copy(), "sigma2": spec.sigma2})


def hypercube_means(d: int, seed, nonnegative_inner=True):
    """Two sign vectors scaled by 1/sqrt(d); optionally with <mu_A, mu_B> >= 0."""
    rng = make_rng(seed, DATA_STREAM)
    a = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    b = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    if nonnegative_inner and a @ b < 0:
        b = -b
    return a / np.sqrt(d), b / np.sqrt(d)


def unit_sphere_points(n: int, d: int, seed) -> np.ndarray:
    rng = make_rng(seed, DATA_STREAM)
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)
