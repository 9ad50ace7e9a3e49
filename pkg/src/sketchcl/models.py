"""Model families: linear feature maps, random ReLU features and two-layer ReLU nets.

Every model maps a feature matrix ``X`` (n x d) to predictions (n x q) and
exposes its Jacobian with rows ordered example-major: row ``i * q + c`` is
the gradient of output ``c`` on example ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .rng import FEATURE_STREAM, make_rng

Layout = tuple[tuple[str, int, int], ...]


def relu(z):
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector together with its named group segments."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidArgumentError("parameter vector must be one-dimensional")
        layout = tuple((str(n), int(o), int(l)) for n, o, l in self.layout)
        check_layout(layout, values.size)
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("parameter vector has non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    @property
    def size(self):
        return self.values.size

    def group(self, name):
        for gname, offset, length in self.layout:
            if gname == name:
                return self.values[offset:offset + length]
        raise KeyError(name)

    def with_values(self, values):
        return ParamVector(np.asarray(values, dtype=float), self.layout)

    @classmethod
    def flat(cls, values, name="theta"):
        values = np.asarray(values, dtype=float).ravel()
        return cls(values, ((name, 0, values.size),))

    @classmethod
    def from_groups(cls, groups):
        """Build from an ordered mapping ``name -> array`` (arrays are raveled)."""
        parts, layout, offset = [], [], 0
        for name, arr in groups.items():
            arr = np.asarray(arr, dtype=float).ravel()
            layout.append((name, offset, arr.size))
            parts.append(arr)
            offset += arr.size
        return cls(np.concatenate(parts) if parts else np.zeros(0), tuple(layout))


def check_layout(layout: Layout, p: int):
    pos = 0
    for name, offset, length in layout:
        if offset != pos or length < 0:
            raise InvalidArgumentError(f"layout group {name!r} is not contiguous at offset {pos}")
        pos += length
    if pos != p:
        raise InvalidArgumentError(f"layout covers {pos} entries but vector has {p}")


def expand_group_scales(layout: Layout, scales) -> np.ndarray:
    """Per-parameter multipliers from a ``{group: scale}`` mapping (missing groups get 1)."""
    p = sum(length for _, _, length in layout)
    out = np.ones(p)
    scales = dict(scales or {})
    names = {name for name, _, _ in layout}
    unknown = set(scales) - names
    if unknown:
        raise InvalidArgumentError(f"unknown parameter groups {sorted(unknown)}")
    for name, offset, length in layout:
        if name in scales:
            value = float(scales[name])
            if not value > 0:
                raise InvalidArgumentError(f"group scale for {name!r} must be positive")
            out[offset:offset + length] = value
    return out


@dataclass
class Dataset:
    """Features, targets (n x q) and optional integer labels of one task."""

    features: np.ndarray
    targets: np.ndarray
    labels: Optional[np.ndarray] = None
    num_classes: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        self.targets = targets
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise InvalidArgumentError("dataset needs at least one example and one feature")
        if targets.shape[0] != n:
            raise InvalidArgumentError("features and targets disagree on the number of examples")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.labels.shape != (n,):
                raise InvalidArgumentError("labels must be a vector of length n")
        if self.num_classes > 0:
            if targets.shape[1] != self.num_classes:
                raise InvalidArgumentError("one-hot targets need num_classes columns")
            if not np.allclose(targets.sum(axis=1), 1.0):
                raise InvalidArgumentError("one-hot rows must sum to one")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def q(self):
        return self.targets.shape[1]

    @classmethod
    def classification(cls, features, labels, num_classes, metadata=None):
        labels = np.asarray(labels).astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise InvalidArgumentError("labels out of range for num_classes")
        targets = np.zeros((labels.size, num_classes))
        targets[np.arange(labels.size), labels] = 1.0
        return cls(features, targets, labels, num_classes, dict(metadata or {}))

    @classmethod
    def regression(cls, features, y, metadata=None):
        return cls(features, np.asarray(y, dtype=float), None, 0, dict(metadata or {}))

    def subset(self, index):
        index = np.asarray(index)
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.features[index], self.targets[index], labels, self.num_classes,
                       dict(self.metadata))

    @staticmethod
    def concat(datasets: Sequence["Dataset"]) -> "Dataset":
        if not datasets:
            raise InvalidArgumentError("nothing to concatenate")
        first = datasets[0]
        if any(ds.q != first.q or ds.d != first.d for ds in datasets):
            raise InvalidArgumentError("datasets disagree on feature or target dimension")
        labels = None
        if all(ds.labels is not None for ds in datasets):
            labels = np.concatenate([ds.labels for ds in datasets])
        return Dataset(np.vstack([ds.features for ds in datasets]),
                       np.vstack([ds.targets for ds in datasets]),
                       labels, first.num_classes)


class BoundModel:
    """A model with its input matrix fixed; what the trainer iterates on."""

    def __init__(self, model, X):
        self.model = model
        self.X = model.check_input(X)

    def predict(self, theta):
        return self.model.predict(theta, self.X)

    def vjp(self, theta, R):
        return self.model.vjp(theta, self.X, R)

    def jvp(self, theta, v):
        return self.model.jvp(theta, self.X, v)


class _BoundLinear(BoundModel):
    def __init__(self, model, X):
        super().__init__(model, X)
        self.Phi = model.features(self.X)

    def predict(self, theta):
        return self.Phi @ self.model._weights(theta)

    def vjp(self, theta, R):
        return (self.Phi.T @ np.asarray(R).reshape(-1, self.model.q)).ravel()

    def jvp(self, theta, v):
        return self.Phi @ self.model._weights(v)


class Model:
    """Interface shared by all model families."""

    d: int
    q: int
    linear_in_params = False

    @property
    def param_count(self) -> int:
        return sum(length for _, _, length in self.layout)

    @property
    def layout(self) -> Layout:
        raise NotImplementedError

    def check_input(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise InvalidArgumentError(f"expected {self.d} input columns, got {X.shape[1]}")
        return X

    def check_params(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.param_count:
            raise InvalidArgumentError(
                f"expected {self.param_count} parameters, got {theta.size}")
        return theta

    def wrap(self, values) -> ParamVector:
        return ParamVector(np.asarray(values, dtype=float).ravel(), self.layout)

    def bind(self, X) -> BoundModel:
        return BoundModel(self, X)

    def init_params(self, rng) -> ParamVector:
        return self.wrap(np.zeros(self.param_count))

    def predict(self, theta, X):
        raise NotImplementedError

    def vjp(self, theta, X, R):
        """``J(theta)^T r`` for a residual matrix ``R`` shaped like the predictions."""
        raise NotImplementedError

    def jvp(self, theta, X, v):
        """``J(theta) v`` reshaped to (n, q)."""
        raise NotImplementedError

    def jacobian(self, theta, X):
        theta, X = self.check_params(theta), self.check_input(X)
        nq = X.shape[0] * self.q
        return np.stack([self.vjp(theta, X, e.reshape(-1, self.q)) for e in np.eye(nq)])

    def sketch_jacobian(self, theta, X, S):
        """``S @ J(theta)`` without forming ``J`` when the model allows it."""
        theta, X = self.check_params(theta), self.check_input(X)
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[1] != X.shape[0] * self.q:
            raise InvalidArgumentError("sketch width must equal n * q")
        return np.stack([self.vjp(theta, X, row.reshape(-1, self.q)) for row in S])

    def jacobian_sq_colsums(self, theta, X):
        """diag(J^T J): squared column norms of the Jacobian."""
        J = self.jacobian(theta, X)
        return np.einsum("ij,ij->j", J, J)


class LinearFeatureMap(Model):
    """``f(x) = W^T psi(x)`` with a fixed featurizer ``psi`` (identity by default)."""

    linear_in_params = True

    def __init__(self, d: int, featurizer: Optional[Callable] = None,
                 num_features: Optional[int] = None, num_outputs: int = 1,
                 name: str = "identity"):
        if d < 1 or num_outputs < 1:
            raise InvalidArgumentError("d and num_outputs must be positive")
        self.d = int(d)
        self.q = int(num_outputs)
        self._featurizer = featurizer
        self.num_features = int(num_features if num_features is not None else d)
        if featurizer is None and self.num_features != self.d:
            raise InvalidArgumentError("identity featurizer needs num_features == d")
        self.name = name

    @property
    def layout(self):
        return (("W", 0, self.num_features * self.q),)

    def features(self, X):
        X = self.check_input(X)
        if self._featurizer is None:
            return X
        Phi = np.asarray(self._featurizer(X), dtype=float)
        if Phi.shape != (X.shape[0], self.num_features):
            raise InvalidArgumentError("featurizer returned the wrong shape")
        return Phi

    def bind(self, X):
        return _BoundLinear(self, X)

    def _weights(self, theta):
        return self.check_params(theta).reshape(self.num_features, self.q)

    def predict(self, theta, X):
        return self.features(X) @ self._weights(theta)

    def vjp(self, theta, X, R):
        self.check_params(theta)
        return (self.features(X).T @ np.asarray(R, dtype=float).reshape(-1, self.q)).ravel()

    def jvp(self, theta, X, v):
        return self.features(X) @ self._weights(v)

    def jacobian(self, theta, X):
        self.check_params(theta)
        Phi = self.features(X)
        if self.q == 1:
            return Phi.copy()
        return np.kron(Phi, np.eye(self.q))

    def sketch_jacobian(self, theta, X, S):
        self.check_params(theta)
        Phi = self.features(X)
        S = np.atleast_2d(np.asarray(S, dtype=float))
        n = Phi.shape[0]
        if S.shape[1] != n * self.q:
            raise InvalidArgumentError("sketch width must equal n * q")
        if self.q == 1:
            return S @ Phi
        S3 = S.reshape(S.shape[0], n, self.q)
        return np.einsum("aic,ij->ajc", S3, Phi).reshape(S.shape[0], -1)

    def jacobian_sq_colsums(self, theta, X):
        self.check_params(theta)
        Phi = self.features(X)
        return np.repeat(np.einsum("ij,ij->j", Phi, Phi), self.q)


class RandomReluFeatures(LinearFeatureMap):
    """``f(x) = W^T relu(Theta_fix x)`` with a frozen Gaussian matrix ``Theta_fix`` (m x d)."""

    def __init__(self, weights, num_outputs: int = 1):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 2:
            raise InvalidArgumentError("random feature weights must be a matrix")
        weights.setflags(write=False)
        self.weights = weights
        m, d = weights.shape
        super().__init__(d, featurizer=self._relu_features, num_features=m,
                         num_outputs=num_outputs, name="random-relu")

    def _relu_features(self, X):
        return relu(X @ self.weights.T)

    @classmethod
    def draw(cls, d: int, m: int, num_outputs: int = 1, rng=None, scale: Optional[float] = None):
        """Gaussian ``Theta_fix`` with iid N(0, scale^2) entries; scale defaults to 1/sqrt(d)."""
        rng = make_rng(0 if rng is None else rng, FEATURE_STREAM)
        scale = 1.0 / np.sqrt(d) if scale is None else scale
        return cls(scale * rng.standard_normal((m, d)), num_outputs)


class TwoLayerRelu(Model):
    """``f(x) = c * (W2^T relu(W1^T x + b1) + b2)``.

    Two configurations are provided through :meth:`experimental` (biases,
    both layers trained) and :meth:`theoretical` (no biases, fixed +-1 second
    layer, ``c = 1/sqrt(k)``, only ``W1`` trained).
    """

    def __init__(self, d: int, k: int, num_outputs: int = 1, with_bias: bool = True,
                 trainable_second_layer: bool = True, output_scale: float = 1.0,
                 omega: Optional[float] = None):
        if d < 1 or k < 1 or num_outputs < 1:
            raise InvalidArgumentError("d, k and num_outputs must be positive")
        self.d, self.k, self.q = int(d), int(k), int(num_outputs)
        self.with_bias = bool(with_bias)
        self.trainable_second_layer = bool(trainable_second_layer)
        self.output_scale = float(output_scale)
        self.omega = omega
        if not self.trainable_second_layer:
            if self.k % 2:
                raise InvalidArgumentError("fixed second layer needs an even number of units")
            v = np.concatenate([np.ones(self.k // 2), -np.ones(self.k // 2)])
            self.v = np.repeat(v[:, None], self.q, axis=1)
            self.v.setflags(write=False)
        else:
            self.v = None
        groups = [("W1", self.d * self.k)]
        if self.with_bias:
            groups.append(("b1", self.k))
        if self.trainable_second_layer:
            groups.append(("W2", self.k * self.q))
            if self.with_bias:
                groups.append(("b2", self.q))
        layout, offset = [], 0
        for name, length in groups:
            layout.append((name, offset, length))
            offset += length
        self._layout = tuple(layout)

    @classmethod
    def experimental(cls, d: int, k: int, num_outputs: int):
        return cls(d, k, num_outputs, with_bias=True, trainable_second_layer=True)

    @classmethod
    def theoretical(cls, d: int, k: int, omega: float = 1.0):
        return cls(d, k, 1, with_bias=False, trainable_second_layer=False,
                   output_scale=1.0 / np.sqrt(k), omega=omega)

    @property
    def layout(self):
        return self._layout

    def init_params(self, rng):
        groups = {}
        w1_scale = self.omega if self.omega is not None else 1.0 / np.sqrt(self.d)
        groups["W1"] = w1_scale * rng.standard_normal((self.d, self.k))
        if self.with_bias:
            groups["b1"] = np.zeros(self.k)
        if self.trainable_second_layer:
            w2_scale = self.omega if self.omega is not None else 1.0 / np.sqrt(self.k)
            groups["W2"] = w2_scale * rng.standard_normal((self.k, self.q))
            if self.with_bias:
                groups["b2"] = np.zeros(self.q)
        return ParamVector.from_groups(groups)

    def _unpack(self, theta):
        theta = self.check_params(theta)
        parts = {name: theta[o:o + l] for name, o, l in self._layout}
        W1 = parts["W1"].reshape(self.d, self.k)
        b1 = parts.get("b1")
        W2 = parts["W2"].reshape(self.k, self.q) if "W2" in parts else self.v
        b2 = parts.get("b2")
        return W1, b1, W2, b2

    def _hidden(self, W1, b1, X):
        Z = X @ W1
        if b1 is not None:
            Z = Z + b1
        return Z

    def predict(self, theta, X):
        X = self.check_input(X)
        W1, b1, W2, b2 = self._unpack(theta)
        out = relu(self._hidden(W1, b1, X)) @ W2
        if b2 is not None:
            out = out + b2
        return self.output_scale * out

    def preactivations(self, theta, X):
        W1, b1, _, _ = self._unpack(theta)
        return self._hidden(W1, b1, self.check_input(X))

    def vjp(self, theta, X, R):
        X = self.check_input(X)
        W1, b1, W2, b2 = self._unpack(theta)
        Z = self._hidden(W1, b1, X)
        G = self.output_scale * np.asarray(R, dtype=float).reshape(X.shape[0], self.q)
        dZ = (G @ W2.T) * (Z > 0)
        grads = [(X.T @ dZ).ravel()]
        if self.with_bias:
            grads.append(dZ.sum(axis=0))
        if self.trainable_second_layer:
            grads.append((relu(Z).T @ G).ravel())
            if self.with_bias:
                grads.append(G.sum(axis=0))
        return np.concatenate(grads)

    def jvp(self, theta, X, v):
        X = self.check_input(X)
        W1, b1, W2, b2 = self._unpack(theta)
        dW1, db1, dW2, db2 = self._unpack(v)
        Z = self._hidden(W1, b1, X)
        dZ = self._hidden(dW1, db1, X) * (Z > 0)
        out = dZ @ W2
        if self.trainable_second_layer:
            out = out + relu(Z) @ dW2
            if db2 is not None:
                out = out + db2
        return self.output_scale * out

    def jacobian(self, theta, X):
        X = self.check_input(X)
        W1, b1, W2, _ = self._unpack(theta)
        Z = self._hidden(W1, b1, X)
        M = (Z > 0).astype(float)
        c, n, q = self.output_scale, X.shape[0], self.q
        blocks = [c * np.einsum("ia,ij,jc->icaj", X, M, W2).reshape(n * q, -1)]
        if self.with_bias:
            blocks.append(c * np.einsum("ij,jc->icj", M, W2).reshape(n * q, -1))
        if self.trainable_second_layer:
            H = relu(Z)
            blocks.append(c * np.einsum("ij,ce->icje", H, np.eye(q)).reshape(n * q, -1))
            if self.with_bias:
                blocks.append(c * np.tile(np.eye(q), (n, 1)))
        return np.hstack(blocks)

    def sketch_jacobian(self, theta, X, S, block_elems=2 ** 24):
        X = self.check_input(X)
        S = np.atleast_2d(np.asarray(S, dtype=float))
        n = X.shape[0]
        if S.shape[1] != n * self.q:
            raise InvalidArgumentError("sketch width must equal n * q")
        W1, b1, W2, _ = self._unpack(theta)
        Z = self._hidden(W1, b1, X)
        M = (Z > 0).astype(float)
        H = relu(Z)
        c = self.output_scale
        step = max(1, block_elems // max(1, n * self.k))
        out = []
        for start in range(0, S.shape[0], step):
            G = c * S[start:start + step].reshape(-1, n, self.q)
            dZ = np.einsum("aic,jc->aij", G, W2) * M
            parts = [np.einsum("ia,bij->baj", X, dZ).reshape(G.shape[0], -1)]
            if self.with_bias:
                parts.append(dZ.sum(axis=1))
            if self.trainable_second_layer:
                parts.append(np.einsum("ij,aic->ajc", H, G).reshape(G.shape[0], -1))
                if self.with_bias:
                    parts.append(G.sum(axis=1))
            out.append(np.hstack(parts))
        return np.vstack(out)

    def jacobian_sq_colsums(self, theta, X):
        X = self.check_input(X)
        W1, b1, W2, _ = self._unpack(theta)
        Z = self._hidden(W1, b1, X)
        M = (Z > 0).astype(float)
        c2 = self.output_scale ** 2
        w2sq = np.einsum("jc,jc->j", W2, W2)
        parts = [(c2 * ((X * X).T @ M) * w2sq).ravel()]
        if self.with_bias:
            parts.append(c2 * M.sum(axis=0) * w2sq)
        if self.trainable_second_layer:
            H = relu(Z)
            parts.append(np.repeat(c2 * np.einsum("ij,ij->j", H, H), self.q))
            if self.with_bias:
                parts.append(np.full(self.q, c2 * X.shape[0]))
        return np.concatenate(parts)


def predict(model: Model, theta, X):
    return model.predict(theta, X)


def jacobian(model: Model, theta, X):
    return model.jacobian(theta, X)


def ntk_gram(X, tol=1e-8):
    """Infinite-width NTK Gram matrix of the two-layer ReLU net (first layer trained).

    ``K_ij = 0.5 * (1 - arccos(<x_i, x_j>) / pi) * <x_i, x_j>`` for unit-norm rows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise InvalidArgumentError("ntk_gram needs unit-norm rows")
    G = np.clip(X @ X.T, -1.0, 1.0)
    K = 0.5 * (1.0 - np.arccos(G) / np.pi) * G
    return 0.5 * (K + K.T)


def empirical_ntk(model: Model, theta, X):
    """Finite-width kernel ``J J^T`` at ``theta``."""
    J = model.jacobian(theta, X)
    return J @ J.T
