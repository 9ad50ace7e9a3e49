"""Approximate-Jacobian quadratic penalties for sequential training.

Four variants are supported:

* ``full``   -- keep the Jacobian itself,
* ``rsj-s``  -- keep a Gaussian sketch ``S J`` with ``S`` of shape s x m,
* ``ewc``    -- keep ``sqrt(diag(J^T J))``, accumulated as a diagonal,
* ``l2``     -- identity, only a task count is kept.

The penalty after tasks ``A, B, ...`` is
``(lam / 2) * sum_T ||K_T G^(1/2) (theta - anchor)||^2`` where ``G`` holds the
per-parameter group scales.
"""
from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .rng import SKETCH_STREAM, derive_seed, make_rng

FULL, SKETCH, EWC, L2 = "full", "sketch", "ewc", "l2"


@dataclass(frozen=True)
class Variant:
    kind: str
    s: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (FULL, SKETCH, EWC, L2):
            raise InvalidArgumentError(f"unknown variant {self.kind!r}")
        if self.kind == SKETCH:
            if not isinstance(self.s, (int, np.integer)) or self.s < 1:
                raise InvalidArgumentError("sketch variant needs s >= 1")
            object.__setattr__(self, "s", int(self.s))
        elif self.s is not None:
            raise InvalidArgumentError(f"variant {self.kind!r} takes no sketch size")

    @property
    def name(self):
        return f"rsj-{self.s}" if self.kind == SKETCH else self.kind

    def __str__(self):
        return self.name

    @classmethod
    def full(cls):
        return cls(FULL)

    @classmethod
    def sketch(cls, s):
        return cls(SKETCH, s)

    @classmethod
    def ewc(cls):
        return cls(EWC)

    @classmethod
    def l2(cls):
        return cls(L2)

    @classmethod
    def parse(cls, text):
        """Accepts ``full``, ``ewc``, ``l2``, ``rsj-100`` / ``sketch-100`` (case-insensitive)."""
        t = str(text).strip().lower()
        m = re.fullmatch(r"(?:rsj|sketch)[-_:]?(\d+)", t)
        if m:
            return cls.sketch(int(m.group(1)))
        if t in (FULL, EWC, L2):
            return cls(t)
        raise InvalidArgumentError(f"cannot parse variant {text!r}")


@dataclass(frozen=True)
class SketchMatrix:
    """Gaussian projection with iid N(0, 1/s) entries."""

    entries: np.ndarray
    seed: int

    @classmethod
    def draw(cls, s, m, seed):
        if s < 1 or m < 1:
            raise InvalidArgumentError("sketch dimensions must be positive")
        rng = make_rng(seed)
        return cls(rng.standard_normal((int(s), int(m))) / np.sqrt(s), int(seed))

    @property
    def shape(self):
        return self.entries.shape


def sketch_seed(experiment_seed, task_index):
    """Seed of the sketch used for task ``task_index`` of an experiment."""
    return derive_seed(experiment_seed, SKETCH_STREAM, task_index)


def build_approx_jacobian(variant: Variant, J, rng_seed=0):
    """Approximate Jacobian of one task from its full Jacobian ``J`` (m x p).

    Returns a matrix for ``full``/``rsj``, a length-p vector for ``ewc`` and
    ``None`` (identity marker) for ``l2``.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if not np.all(np.isfinite(J)):
        raise InvalidArgumentError("Jacobian has non-finite entries")
    if variant.kind == FULL:
        return J
    if variant.kind == SKETCH:
        S = SketchMatrix.draw(variant.s, J.shape[0], rng_seed)
        return S.entries @ J
    if variant.kind == EWC:
        return np.sqrt(np.einsum("ij,ij->j", J, J))
    return None


def approx_jacobian_for(model, theta, X, variant: Variant, rng_seed=0):
    """Same as :func:`build_approx_jacobian` but lets the model skip forming ``J``."""
    if variant.kind == FULL:
        return build_approx_jacobian(variant, model.jacobian(theta, X))
    if variant.kind == SKETCH:
        m = np.atleast_2d(X).shape[0] * model.q
        S = SketchMatrix.draw(variant.s, m, rng_seed)
        K = model.sketch_jacobian(theta, X, S.entries)
        if not np.all(np.isfinite(K)):
            raise InvalidArgumentError("Jacobian has non-finite entries")
        return K
    if variant.kind == EWC:
        colsq = model.jacobian_sq_colsums(theta, X)
        if not np.all(np.isfinite(colsq)):
            raise InvalidArgumentError("Jacobian has non-finite entries")
        return np.sqrt(colsq)
    return None


@dataclass(frozen=True)
class PenaltyState:
    """Accumulated penalty of all past tasks; immutable."""

    variant: Variant
    anchor: np.ndarray
    factors: tuple = ()
    diag: Optional[np.ndarray] = None
    count: int = 0
    group_scales: Optional[np.ndarray] = None
    tasks_seen: int = 0

    @classmethod
    def empty(cls, variant: Variant, p: int, group_scales=None, anchor=None):
        anchor = np.zeros(p) if anchor is None else np.asarray(anchor, dtype=float).copy()
        if anchor.size != p:
            raise InvalidArgumentError("anchor length must equal p")
        if group_scales is not None:
            group_scales = np.asarray(group_scales, dtype=float)
            if group_scales.shape != (p,) or np.any(group_scales <= 0):
                raise InvalidArgumentError("group scales must be positive, one per parameter")
        diag = np.zeros(p) if variant.kind == EWC else None
        return cls(variant, anchor, (), diag, 0, group_scales, 0)

    @property
    def p(self):
        return self.anchor.size

    @functools.cached_property
    def _stacked(self):
        if not self.factors:
            return np.zeros((0, self.p))
        return np.vstack(self.factors)

    @functools.cached_property
    def _sqrt_scales(self):
        return None if self.group_scales is None else np.sqrt(self.group_scales)

    def _scaled(self, v):
        return v if self._sqrt_scales is None else self._sqrt_scales * v

    def hessian_matvec(self, v):
        """Apply the (unweighted by lambda) penalty Hessian to ``v``."""
        v = self._scaled(np.asarray(v, dtype=float))
        kind = self.variant.kind
        if kind in (FULL, SKETCH):
            K = self._stacked
            out = K.T @ (K @ v)
        elif kind == EWC:
            out = self.diag * v
        else:
            out = self.count * v
        return self._scaled(out)

    def quadratic_form(self):
        """Dense p x p matrix of the penalty Hessian (small problems only)."""
        return np.column_stack([self.hessian_matvec(e) for e in np.eye(self.p)])

    def memory_floats(self):
        """Number of reals actually held (anchor included)."""
        kind = self.variant.kind
        if kind in (FULL, SKETCH):
            return self.p + sum(K.size for K in self.factors)
        if kind == EWC:
            return 2 * self.p
        return self.p


def accumulate(state: PenaltyState, K, new_anchor) -> PenaltyState:
    """Add one task's approximate Jacobian and move the anchor."""
    new_anchor = np.asarray(new_anchor, dtype=float).ravel().copy()
    if new_anchor.size != state.p:
        raise InvalidArgumentError("new anchor length must equal p")
    kind = state.variant.kind
    if kind in (FULL, SKETCH):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.ndim != 2 or K.shape[1] != state.p:
            raise InvalidArgumentError(
                f"factor must have {state.p} columns for variant {state.variant}")
        if kind == SKETCH and K.shape[0] != state.variant.s:
            raise InvalidArgumentError(
                f"sketched factor has {K.shape[0]} rows, variant expects {state.variant.s}")
        return replace(state, factors=state.factors + (K,), anchor=new_anchor,
                       tasks_seen=state.tasks_seen + 1)
    if kind == EWC:
        k = np.asarray(K, dtype=float) if K is not None else None
        if k is None or k.ndim != 1 or k.size != state.p:
            raise InvalidArgumentError("EWC factor must be a length-p vector")
        return replace(state, diag=state.diag + k * k, anchor=new_anchor,
                       tasks_seen=state.tasks_seen + 1)
    if K is not None:
        raise InvalidArgumentError("L2 variant takes the identity marker (None)")
    return replace(state, count=state.count + 1, anchor=new_anchor,
                   tasks_seen=state.tasks_seen + 1)


def _check_lambda(lam):
    if not lam >= 0:
        raise InvalidArgumentError(f"lambda must be nonnegative, got {lam}")


def penalty_value(state: PenaltyState, theta, lam=1.0) -> float:
    _check_lambda(lam)
    delta = np.asarray(theta, dtype=float).ravel() - state.anchor
    if delta.size != state.p:
        raise InvalidArgumentError("theta length must equal p")
    kind = state.variant.kind
    v = state._scaled(delta)
    if kind in (FULL, SKETCH):
        r = state._stacked @ v
        total = float(r @ r)
    elif kind == EWC:
        total = float(np.sum(state.diag * v * v))
    else:
        total = state.count * float(v @ v)
    return 0.5 * lam * total


def penalty_gradient(state: PenaltyState, theta, lam=1.0) -> np.ndarray:
    _check_lambda(lam)
    delta = np.asarray(theta, dtype=float).ravel() - state.anchor
    if delta.size != state.p:
        raise InvalidArgumentError("theta length must equal p")
    return lam * state.hessian_matvec(delta)


def memory_cost(variant, p, K_tasks, n=None, s=None) -> int:
    """Reals stored after ``K_tasks`` tasks of ``n`` examples each."""
    if isinstance(variant, str):
        name = variant.strip().lower()
        variant = Variant.sketch(s) if name in (SKETCH, "rsj") else Variant.parse(name)
    if p < 1 or K_tasks < 1:
        raise InvalidArgumentError("p and K must be positive")
    kind = variant.kind
    if kind == FULL:
        if n is None or n < 1:
            raise InvalidArgumentError("full variant needs n >= 1")
        return int(p * (1 + K_tasks * n))
    if kind == SKETCH:
        s = variant.s if s is None else s
        if s is None or s < 1:
            raise InvalidArgumentError("sketch variant needs s >= 1")
        return int(p * (1 + K_tasks * s))
    if kind == EWC:
        return int(2 * p)
    return int(p)
