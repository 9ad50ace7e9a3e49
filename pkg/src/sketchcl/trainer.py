"""Gradient descent on the quadratic loss plus accumulated penalty, and the
sequential / joint training loops built on it."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .models import Dataset, Model, ParamVector, expand_group_scales
from .regularizers import (PenaltyState, Variant, accumulate, approx_jacobian_for,
                           penalty_gradient, penalty_value, sketch_seed)
from .rng import INIT_STREAM, make_rng

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e12


@dataclass
class TrainConfig:
    stepsize: Union[float, str] = "auto"
    max_iters: int = 1000
    lam: float = 1.0
    grad_tol: float = 1e-8
    batch_size: Union[int, str] = "full"
    seed: int = 0
    record_iterates: bool = False

    def __post_init__(self):
        if self.stepsize != "auto" and not float(self.stepsize) > 0:
            raise InvalidArgumentError("stepsize must be positive or 'auto'")
        if int(self.max_iters) < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if not self.lam >= 0:
            raise InvalidArgumentError("lambda must be nonnegative")
        if self.batch_size != "full" and int(self.batch_size) < 1:
            raise InvalidArgumentError("batch_size must be positive or 'full'")

    @property
    def full_batch(self):
        return self.batch_size == "full"


@dataclass
class TrainTrace:
    losses: np.ndarray
    theta: ParamVector
    iterations_run: int
    grad_norm: float
    stepsize: float
    full_batch: bool = True
    iterates: Optional[list] = None


class _Objective:
    """``0.5 * ||f(theta) - Y||^2 + penalty(theta)`` on a fixed dataset."""

    def __init__(self, model: Model, data: Dataset, state: Optional[PenaltyState] = None,
                 lam: float = 0.0):
        if data.q != model.q:
            raise InvalidArgumentError(f"model has {model.q} outputs, data has {data.q} targets")
        self.model = model
        self.bound = model.bind(data.features)
        self.Y = data.targets
        self.state = state
        self.lam = lam
        self.n = data.n

    def _penalty(self, theta):
        if self.state is None or self.lam == 0:
            return 0.0, 0.0
        return penalty_value(self.state, theta, self.lam), penalty_gradient(self.state, theta, self.lam)

    def __call__(self, theta):
        R = self.bound.predict(theta) - self.Y
        pv, pg = self._penalty(theta)
        return 0.5 * float(np.sum(R * R)) + pv, self.bound.vjp(theta, R) + pg

    def batch(self, theta, idx):
        # task part rescaled by n/b so its gradient is unbiased for the full loss
        X = self.bound.X[idx]
        R = self.model.predict(theta, X) - self.Y[idx]
        scale = self.n / len(idx)
        pv, pg = self._penalty(theta)
        return (0.5 * scale * float(np.sum(R * R)) + pv,
                scale * self.model.vjp(theta, X, R) + pg)

    def hessian_matvec(self, theta, v):
        out = self.bound.vjp(theta, self.bound.jvp(theta, v))
        if self.state is not None and self.lam:
            out = out + self.lam * self.state.hessian_matvec(v)
        return out


def _power_iteration(matvec, p, iters=100, seed=0):
    rng = make_rng(seed, 17)
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = matvec(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return float(v @ matvec(v))


def auto_stepsize(model_or_J, data: Optional[Dataset] = None, theta=None,
                  state: Optional[PenaltyState] = None, lam: float = 0.0,
                  iters: int = 100, seed: int = 0) -> float:
    """``0.9 / lambda_max`` of the quadratic form ``J^T J + lam * penalty Hessian``.

    Accepts either a Jacobian matrix or a (model, data) pair; the largest
    eigenvalue comes from ``iters`` power iterations. Falls back to 1.0 for a
    zero form.
    """
    if isinstance(model_or_J, Model):
        if data is None:
            raise InvalidArgumentError("auto_stepsize needs data together with a model")
        model = model_or_J
        p = model.param_count
        theta = np.zeros(p) if theta is None else np.asarray(theta, dtype=float)
        obj = _Objective(model, data, state, lam)
        lmax = _power_iteration(lambda v: obj.hessian_matvec(theta, v), p, iters, seed)
    else:
        J = np.atleast_2d(np.asarray(model_or_J, dtype=float))

        def matvec(v):
            out = J.T @ (J @ v)
            if state is not None and lam:
                out = out + lam * state.hessian_matvec(v)
            return out

        lmax = _power_iteration(matvec, J.shape[1], iters, seed)
    if lmax <= 0:
        return 1.0
    return 0.9 / lmax


def _descend(model: Model, obj: _Objective, theta0, cfg: TrainConfig, eta=None):
    theta = np.array(theta0, dtype=float).ravel()
    if eta is None:
        if cfg.stepsize == "auto":
            lmax = _power_iteration(lambda v: obj.hessian_matvec(theta, v), theta.size,
                                    seed=cfg.seed)
            eta = 0.9 / lmax if lmax > 0 else 1.0
        else:
            eta = float(cfg.stepsize)
    iterates = [theta.copy()] if cfg.record_iterates else None
    loss, grad = obj(theta)
    losses = [loss]
    steps = 0
    if cfg.full_batch:
        for _ in range(int(cfg.max_iters)):
            if np.linalg.norm(grad) <= cfg.grad_tol:
                break
            theta = theta - eta * grad
            loss, grad = obj(theta)
            steps += 1
            _check_divergence(loss, eta)
            losses.append(loss)
            if iterates is not None:
                iterates.append(theta.copy())
    else:
        rng = make_rng(cfg.seed, 23)
        b = min(int(cfg.batch_size), obj.n)
        while steps < cfg.max_iters:
            order = rng.permutation(obj.n)
            for start in range(0, obj.n, b):
                if steps >= cfg.max_iters:
                    break
                _, g = obj.batch(theta, order[start:start + b])
                theta = theta - eta * g
                steps += 1
                if iterates is not None:
                    iterates.append(theta.copy())
            loss, grad = obj(theta)
            _check_divergence(loss, eta)
            losses.append(loss)
            if np.linalg.norm(grad) <= cfg.grad_tol:
                break
    return TrainTrace(np.asarray(losses), model.wrap(theta), steps,
                      float(np.linalg.norm(grad)), float(eta), cfg.full_batch, iterates)


def _check_divergence(loss, eta):
    if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise DivergenceError(f"gradient descent diverged (loss {loss:.3g}) with stepsize {eta:.6g}")


def initial_params(model: Model, seed=0):
    """Zero for models linear in their parameters, Gaussian init otherwise."""
    if model.linear_in_params:
        return model.wrap(np.zeros(model.param_count))
    return model.init_params(make_rng(seed, INIT_STREAM))


def train_first_task(model: Model, data: Dataset, cfg: TrainConfig, theta0=None):
    theta0 = initial_params(model, cfg.seed) if theta0 is None else theta0
    trace = _descend(model, _Objective(model, data), theta0, cfg)
    return trace.theta, trace


def train_next_task(model: Model, data: Dataset, state: PenaltyState, cfg: TrainConfig,
                    theta0=None):
    if state.p != model.param_count:
        raise InvalidArgumentError("penalty anchor length does not match the model")
    theta0 = state.anchor if theta0 is None else theta0
    trace = _descend(model, _Objective(model, data, state, cfg.lam), theta0, cfg)
    return trace.theta, trace


def joint_train(model: Model, datasets: Sequence[Dataset], cfg: TrainConfig, theta0=None):
    """Train on the concatenation of all datasets (the all-data baseline)."""
    data = Dataset.concat(list(datasets))
    theta0 = initial_params(model, cfg.seed) if theta0 is None else theta0
    trace = _descend(model, _Objective(model, data), theta0, cfg)
    return trace.theta, trace


def single_head_accuracy(model: Model, theta, test_sets: Sequence[Dataset]) -> float:
    """Pooled accuracy of argmax over all outputs; ties go to the smallest class index."""
    sets = [ds for ds in test_sets if ds is not None]
    if not sets or sum(ds.n for ds in sets) == 0:
        raise InvalidArgumentError("empty evaluation pool")
    correct = total = 0
    for ds in sets:
        if ds.labels is None:
            raise InvalidArgumentError("single-head accuracy needs labelled data")
        pred = np.argmax(model.predict(theta, ds.features), axis=1)
        correct += int(np.sum(pred == ds.labels))
        total += ds.n
    return correct / total


def pooled_mse(model: Model, theta, test_sets: Sequence[Dataset]) -> float:
    F = [model.predict(theta, ds.features) - ds.targets for ds in test_sets]
    return float(np.mean(np.concatenate([np.sum(r * r, axis=1) for r in F])))


@dataclass
class SequenceResult:
    method: str
    rows: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    state: Optional[PenaltyState] = None


def _evaluate(model, theta, sets):
    if all(ds.labels is not None and ds.num_classes > 0 for ds in sets):
        return "accuracy", single_head_accuracy(model, theta, sets)
    return "mse", pooled_mse(model, theta, sets)


def run_sequence(model: Model, tasks: Sequence[Dataset], variant: Variant, cfg: TrainConfig,
                 test_sets: Optional[Sequence[Dataset]] = None, group_scales=None,
                 theta0=None) -> SequenceResult:
    """Train task by task with the given penalty variant.

    After each task the row records the pooled metric over every task seen so
    far (test sets if given, training sets otherwise) and the reals held in
    the penalty state.
    """
    if not tasks:
        raise InvalidArgumentError("run_sequence needs at least one task")
    if test_sets is not None and len(test_sets) != len(tasks):
        raise InvalidArgumentError("need one test set per task")
    evals = list(test_sets) if test_sets is not None else list(tasks)
    scales = None
    if group_scales:
        scales = expand_group_scales(model.layout, group_scales)
    state = PenaltyState.empty(variant, model.param_count, scales)
    result = SequenceResult(variant.name)
    for k, task in enumerate(tasks):
        t0 = time.perf_counter()
        if k == 0:
            theta, trace = train_first_task(model, task, cfg, theta0)
        else:
            theta, trace = train_next_task(model, task, state, cfg)
        K = approx_jacobian_for(model, theta, task.features, variant, sketch_seed(cfg.seed, k))
        state = accumulate(state, K, theta)
        metric, value = _evaluate(model, theta, evals[:k + 1])
        result.rows.append({
            "task_index": k, "method": variant.name, "metric": metric, "value": value,
            "memory_cost": state.memory_floats(), "iterations": trace.iterations_run,
            "full_batch": trace.full_batch, "wall_time": time.perf_counter() - t0,
        })
        result.thetas.append(theta)
        log.info("%s task %d: %s=%.4f (%d iters)", variant.name, k, metric, value,
                 trace.iterations_run)
    result.state = state
    return result


def run_joint_sequence(model: Model, tasks: Sequence[Dataset], cfg: TrainConfig,
                       test_sets: Optional[Sequence[Dataset]] = None,
                       theta0=None) -> SequenceResult:
    """All-data baseline: retrain from scratch on every prefix of the task list."""
    evals = list(test_sets) if test_sets is not None else list(tasks)
    result = SequenceResult("all-data")
    for k in range(len(tasks)):
        t0 = time.perf_counter()
        theta, trace = joint_train(model, tasks[:k + 1], cfg, theta0)
        metric, value = _evaluate(model, theta, evals[:k + 1])
        stored = sum(ds.features.size + ds.targets.size for ds in tasks[:k + 1])
        result.rows.append({
            "task_index": k, "method": "all-data", "metric": metric, "value": value,
            "memory_cost": model.param_count + stored, "iterations": trace.iterations_run,
            "full_batch": trace.full_batch, "wall_time": time.perf_counter() - t0,
        })
        result.thetas.append(theta)
    return result
