"""Desk-scale objectives, synthetic data and non-IID partitioning.

Three objective kinds stand in for the CNN workloads: a per-worker quadratic
(whose global optimum is exact), a multinomial logistic classifier and a
one-hidden-layer tanh network with hand-written backprop.
"""
from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DataError, DimensionError, PartitionError


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError("labels must have one entry per feature row")
        if self.n_classes < 1:
            raise DataError("n_classes must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes - 1}]")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.features, labels, self.n_classes)


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray

    def __len__(self):
        return self.indices.shape[0]


# --------------------------------------------------------------------------
# Objectives


class Objective(ABC):
    """Loss and gradient of a model with flat parameter vector ``theta``.

    ``loss``/``grad`` average over the rows of ``X``; the full-dataset gradient
    is therefore the mean of per-sample gradients.
    """

    is_classifier = False

    @property
    @abstractmethod
    def n_params(self) -> int: ...

    @abstractmethod
    def loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float: ...

    @abstractmethod
    def grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    def predict(self, theta, X) -> Optional[np.ndarray]:
        return None

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.n_params)

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise DimensionError(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        return theta

    def batch_loss(self, theta, ds: LabeledDataset, batch: MiniBatch) -> float:
        return self.loss(theta, ds.features[batch.indices], ds.labels[batch.indices])

    def batch_grad(self, theta, ds: LabeledDataset, batch: MiniBatch) -> np.ndarray:
        return self.grad(theta, ds.features[batch.indices], ds.labels[batch.indices])


class HeterogeneousQuadratic(Objective):
    """``F(theta; x) = 0.5 (theta - x)^T A (theta - x)`` with ``x`` a feature row.

    A worker dataset whose rows all equal ``center`` gives the local objective
    ``0.5 (theta - center)^T A (theta - center)``; noisy rows give stochastic
    gradients with the same expectation.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError("A must be a square matrix")
        if not np.allclose(A, A.T):
            raise ConfigError("A must be symmetric")
        self.A = A

    @property
    def n_params(self):
        return self.A.shape[0]

    def _check_X(self, X):
        if X.shape[1] != self.n_params:
            raise DimensionError(f"feature width {X.shape[1]} != quadratic dimension {self.n_params}")

    def loss(self, theta, X, y=None):
        theta = self._check_theta(theta)
        self._check_X(X)
        diff = theta[None, :] - X
        return float(0.5 * np.mean(np.einsum("ni,ij,nj->n", diff, self.A, diff)))

    def grad(self, theta, X, y=None):
        theta = self._check_theta(theta)
        self._check_X(X)
        return self.A @ (theta - X.mean(axis=0))


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _log_softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


class MultinomialLogistic(Objective):
    """Linear softmax classifier; ``theta`` packs W (L x d, row-major) then b (L)."""

    is_classifier = True

    def __init__(self, n_features: int, n_classes: int):
        if n_features < 1 or n_classes < 2:
            raise ConfigError("logistic objective needs n_features >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.n_classes = n_classes

    @property
    def n_params(self):
        return self.n_classes * (self.n_features + 1)

    def _unpack(self, theta):
        theta = self._check_theta(theta)
        L, d = self.n_classes, self.n_features
        return theta[: L * d].reshape(L, d), theta[L * d:]

    def _logits(self, theta, X):
        if X.shape[1] != self.n_features:
            raise DimensionError(f"feature width {X.shape[1]} != {self.n_features}")
        W, b = self._unpack(theta)
        return X @ W.T + b

    def loss(self, theta, X, y):
        logp = _log_softmax(self._logits(theta, X))
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def grad(self, theta, X, y):
        P = _softmax(self._logits(theta, X))
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        return np.concatenate([(P.T @ X).ravel(), P.sum(axis=0)])

    def predict(self, theta, X):
        return np.argmax(self._logits(theta, X), axis=1)

    def predict_proba(self, theta, X):
        return _softmax(self._logits(theta, X))


class TinyMLP(Objective):
    """One tanh hidden layer, softmax output, cross-entropy loss.

    ``theta`` packs W1 (H x d), b1 (H), W2 (L x H), b2 (L).
    """

    is_classifier = True

    def __init__(self, n_features: int, n_classes: int, hidden: int = 16):
        if n_features < 1 or n_classes < 2 or hidden < 1:
            raise ConfigError("mlp objective needs n_features, hidden >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden

    @property
    def n_params(self):
        d, H, L = self.n_features, self.hidden, self.n_classes
        return H * d + H + L * H + L

    def _unpack(self, theta):
        theta = self._check_theta(theta)
        d, H, L = self.n_features, self.hidden, self.n_classes
        i = 0
        W1 = theta[i:i + H * d].reshape(H, d)
        i += H * d
        b1 = theta[i:i + H]
        i += H
        W2 = theta[i:i + L * H].reshape(L, H)
        i += L * H
        return W1, b1, W2, theta[i:]

    def _forward(self, theta, X):
        if X.shape[1] != self.n_features:
            raise DimensionError(f"feature width {X.shape[1]} != {self.n_features}")
        W1, b1, W2, b2 = self._unpack(theta)
        Hid = np.tanh(X @ W1.T + b1)
        return Hid, Hid @ W2.T + b2

    def loss(self, theta, X, y):
        _, Z = self._forward(theta, X)
        logp = _log_softmax(Z)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def grad(self, theta, X, y):
        _, _, W2, _ = self._unpack(theta)
        Hid, Z = self._forward(theta, X)
        dZ = _softmax(Z)
        dZ[np.arange(len(y)), y] -= 1.0
        dZ /= len(y)
        dW2 = dZ.T @ Hid
        db2 = dZ.sum(axis=0)
        dA = (dZ @ W2) * (1.0 - Hid ** 2)
        dW1 = dA.T @ X
        db1 = dA.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def predict(self, theta, X):
        return np.argmax(self._forward(theta, X)[1], axis=1)

    def predict_proba(self, theta, X):
        return _softmax(self._forward(theta, X)[1])

    def init_params(self, rng):
        d, H, L = self.n_features, self.hidden, self.n_classes
        W1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(H, d))
        W2 = rng.normal(0.0, 1.0 / np.sqrt(H), size=(L, H))
        return np.concatenate([W1.ravel(), np.zeros(H), W2.ravel(), np.zeros(L)])


def make_objective(kind: str, n_features: int, n_classes: int, hidden: int = 16) -> Objective:
    if kind == "logistic":
        return MultinomialLogistic(n_features, n_classes)
    if kind == "mlp":
        return TinyMLP(n_features, n_classes, hidden)
    raise ConfigError(f"unknown classifier objective {kind!r}", field="objective")


# --------------------------------------------------------------------------
# Data


def make_synthetic_classification(n: int, d_in: int, n_classes: int,
                                  class_separation: float, seed: int,
                                  noise: float = 1.0) -> LabeledDataset:
    """Gaussian clusters, one per class, with ``noise``-std isotropic scatter.

    When ``n_classes <= d_in`` the class means are mutually orthogonal and
    exactly ``class_separation`` apart; otherwise they are random directions,
    roughly that far apart.
    """
    if n_classes < 2 or n < n_classes or d_in < 1:
        raise ConfigError("need n >= n_classes >= 2 and d_in >= 1")
    if class_separation < 0:
        raise ConfigError("class_separation must be >= 0", field="class_separation")
    rng = np.random.default_rng(seed)
    if n_classes <= d_in:
        Q, _ = np.linalg.qr(rng.normal(size=(d_in, d_in)))
        directions = Q[:, :n_classes].T
    else:
        directions = rng.normal(size=(n_classes, d_in))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    # orthonormal vectors are sqrt(2) apart
    means = directions * (class_separation / np.sqrt(2.0))
    labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, size=n - n_classes)])
    labels = rng.permutation(labels)
    X = means[labels] + noise * rng.normal(size=(n, d_in))
    return LabeledDataset(X, labels, n_classes)


def load_csv_dataset(path, n_classes: Optional[int] = None) -> LabeledDataset:
    """Read a CSV with a header row; the last column is the integer label."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:-1]] + [int(row[-1])])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows) or width < 2:
        raise DataError(f"{path}: ragged rows or missing feature columns")
    arr = np.array([r[:-1] for r in rows], dtype=np.float64)
    y = np.array([r[-1] for r in rows], dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    return LabeledDataset(arr, y, n_classes)


def train_test_split(ds: LabeledDataset, test_fraction: float, rng: np.random.Generator):
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must be in [0, 1)", field="test_fraction")
    perm = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def dirichlet_partition_indices(labels, n_workers: int, beta: float,
                                rng: np.random.Generator, max_retries: int = 1000) -> list[np.ndarray]:
    """Split sample indices across workers, class by class, with Dirichlet shares.

    The whole allocation is redrawn while any worker ends up empty.
    """
    if n_workers < 1:
        raise ConfigError("need at least one worker", field="workers")
    if beta <= 0:
        raise ConfigError("beta must be > 0", field="beta")
    labels = np.asarray(labels)
    if labels.size < n_workers:
        raise PartitionError(f"{labels.size} samples cannot fill {n_workers} workers")
    classes = np.unique(labels)
    for _ in range(max_retries):
        parts = [[] for _ in range(n_workers)]
        for k in classes:
            idx = rng.permutation(np.flatnonzero(labels == k))
            shares = rng.dirichlet(np.full(n_workers, beta))
            cuts = (np.cumsum(shares)[:-1] * len(idx)).astype(np.int64)
            for j, chunk in enumerate(np.split(idx, cuts)):
                parts[j].append(chunk)
        out = [np.sort(np.concatenate(p)) for p in parts]
        if min(len(p) for p in out) > 0:
            return out
    raise PartitionError(f"no non-empty partition found in {max_retries} draws")


def dirichlet_partition(ds: LabeledDataset, n_workers: int, beta: float, seed) -> list[LabeledDataset]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [ds.subset(p) for p in dirichlet_partition_indices(ds.labels, n_workers, beta, rng)]


def sample_batch(ds: LabeledDataset, batch_size: int, rng: np.random.Generator) -> MiniBatch:
    """``batch_size`` indices drawn uniformly with replacement."""
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1", field="batch_size")
    if len(ds) == 0:
        raise DataError("cannot sample from an empty dataset")
    return MiniBatch(rng.integers(0, len(ds), size=batch_size))


def evaluate(obj: Objective, theta, ds: LabeledDataset):
    """Full-dataset mean loss and accuracy (``None`` for non-classifiers)."""
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    loss = obj.loss(theta, ds.features, ds.labels)
    if not obj.is_classifier:
        return loss, None
    acc = float(np.mean(obj.predict(theta, ds.features) == ds.labels))
    return loss, acc


def label_entropy(ds: LabeledDataset) -> float:
    counts = np.bincount(ds.labels, minlength=ds.n_classes).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


# --------------------------------------------------------------------------
# Quadratic suite


@dataclass(frozen=True, eq=False)
class QuadraticSuite:
    """Per-worker quadratics plus the exact minimiser of their average."""

    objectives: Sequence[HeterogeneousQuadratic]
    datasets: Sequence[LabeledDataset]
    centers: np.ndarray
    A_mean: np.ndarray
    optimum: np.ndarray

    def global_loss(self, theta) -> float:
        return float(np.mean([o.loss(theta, d.features) for o, d in zip(self.objectives, self.datasets)]))

    def optimal_loss(self) -> float:
        return self.global_loss(self.optimum)


def make_quadratic_suite(n_workers: int, dim: int, seed: int, heterogeneity: float = 1.0,
                         eig_range=(0.5, 2.0), noise: float = 0.0,
                         samples_per_worker: int = 20) -> QuadraticSuite:
    """Random SPD curvatures ``A_m`` and centres ``c_m ~ N(0, heterogeneity^2 I)``.

    With ``noise == 0`` every sample row equals the centre, so gradients are
    exact and ``F_m(c_m) == 0``.
    """
    if n_workers < 1 or dim < 1 or samples_per_worker < 1:
        raise ConfigError("quadratic suite needs positive sizes")
    lo, hi = eig_range
    if not 0 < lo <= hi:
        raise ConfigError("eigenvalue range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    objectives, datasets, centers, As = [], [], [], []
    for _ in range(n_workers):
        Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        A = (Q * rng.uniform(lo, hi, size=dim)) @ Q.T
        A = 0.5 * (A + A.T)
        c = heterogeneity * rng.normal(size=dim)
        X = c + noise * rng.normal(size=(samples_per_worker, dim))
        if noise > 0:
            X += c - X.mean(axis=0)  # keep the empirical mean exactly at c
        objectives.append(HeterogeneousQuadratic(A))
        datasets.append(LabeledDataset(X, np.zeros(samples_per_worker, dtype=np.int64), 1))
        centers.append(c)
        As.append(A)
    A_mean = np.mean(As, axis=0)
    b = np.mean([A @ c for A, c in zip(As, centers)], axis=0)
    optimum = np.linalg.solve(A_mean, b)
    return QuadraticSuite(objectives, datasets, np.array(centers), A_mean, optimum)
