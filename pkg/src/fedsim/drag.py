"""Divergence-based aggregation: DRAG and its Byzantine-robust variant BR-DRAG.

Both rules measure how far each uploaded update ``g`` strays from a server
reference direction ``r`` (the degree of divergence, ``lam = c * (1 - cos)``)
and replace ``g`` by a modified vector ``v`` before averaging:

* DRAG keeps the norm of ``g`` and mixes in ``r`` rescaled to ``||g||``;
  ``r`` is an exponential moving average of past aggregates.
* BR-DRAG rescales ``g`` to ``||r||`` and mixes in ``r`` itself; ``r`` comes
  from a few SGD steps on a trusted root dataset held by the server.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import vecmath
from .exceptions import ConfigError, DimensionError, ProtocolError
from .tasks import LabeledDataset, Objective, sample_batch
from .vecmath import ZERO_NORM_EPS, as_vector, cosine, norm2


def dod(g, r, c: float) -> float:
    """Degree of divergence ``c * (1 - cos(g, r))``, in ``[0, 2c]``."""
    if not 0.0 <= c <= 1.0:
        raise ConfigError(f"c must lie in [0, 1], got {c}", field="c")
    lam = c * (1.0 - cosine(g, r))
    return min(2.0 * c, max(0.0, lam))


def modify_drag(g, r, lam: float) -> np.ndarray:
    """``(1 - lam) g + lam (||g|| / ||r||) r``; returns ``g`` if either norm vanishes."""
    g, r = as_vector(g), as_vector(r)
    if g.shape != r.shape:
        raise DimensionError(f"length mismatch: {g.shape[0]} vs {r.shape[0]}")
    ng, nr = norm2(g), norm2(r)
    if ng <= ZERO_NORM_EPS or nr <= ZERO_NORM_EPS:
        return g.copy()
    return (1.0 - lam) * g + (lam * ng / nr) * r


def modify_br(g, r, lam: float) -> np.ndarray:
    """``(1 - lam) (||r|| / ||g||) g + lam r``.

    A vanishing ``g`` yields ``lam * r``; a vanishing ``r`` yields zero.
    """
    g, r = as_vector(g), as_vector(r)
    if g.shape != r.shape:
        raise DimensionError(f"length mismatch: {g.shape[0]} vs {r.shape[0]}")
    ng, nr = norm2(g), norm2(r)
    if nr <= ZERO_NORM_EPS:
        return np.zeros_like(g)
    if ng <= ZERO_NORM_EPS:
        return lam * r
    return ((1.0 - lam) * nr / ng) * g + lam * r


def reference_init(uploads: Sequence) -> np.ndarray:
    if len(uploads) == 0:
        raise ProtocolError("reference_init needs at least one upload")
    return vecmath.mean(uploads)


def reference_step(r_prev, delta_prev, alpha: float) -> np.ndarray:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}", field="alpha")
    return vecmath.linear_combine([1.0 - alpha, alpha], [r_prev, delta_prev])


def closed_form_reference(g0_mean, deltas: Sequence, alpha: float, t: int) -> np.ndarray:
    """Unrolled moving average: ``(1-a)^t g0 + sum_i a (1-a)^(t-i-1) delta_i``.

    Only used to check the recursion in :func:`reference_step`.
    """
    if t < 1 or len(deltas) != t:
        raise ProtocolError(f"closed form at t={t} needs exactly t deltas, got {len(deltas)}")
    coeffs = [(1.0 - alpha) ** t] + [alpha * (1.0 - alpha) ** (t - i - 1) for i in range(t)]
    return vecmath.linear_combine(coeffs, [g0_mean, *deltas])


def aggregate_modified(vs: Sequence) -> np.ndarray:
    if len(vs) == 0:
        raise ProtocolError("cannot aggregate an empty set of uploads")
    return vecmath.mean(vs)


@dataclass
class DragState:
    alpha: float
    c: float
    r: Optional[np.ndarray] = None
    delta_prev: Optional[np.ndarray] = None
    keep_history: bool = False
    g0_mean: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}", field="alpha")
        if not 0.0 <= self.c <= 1.0:
            raise ConfigError(f"c must lie in [0, 1], got {self.c}", field="c")

    @property
    def initialized(self) -> bool:
        return self.r is not None

    def init_reference(self, uploads) -> np.ndarray:
        self.r = reference_init(uploads)
        if self.keep_history:
            self.g0_mean = self.r.copy()
        return self.r

    def advance_reference(self) -> np.ndarray:
        if self.r is None or self.delta_prev is None:
            raise ProtocolError("reference cannot advance before the first aggregate")
        self.r = reference_step(self.r, self.delta_prev, self.alpha)
        return self.r

    def record_aggregate(self, delta) -> None:
        self.delta_prev = as_vector(delta).copy()
        if self.keep_history:
            self.history.append(self.delta_prev)

    def closed_form(self) -> np.ndarray:
        if not self.keep_history or self.g0_mean is None:
            raise ProtocolError("closed form needs keep_history=True")
        return closed_form_reference(self.g0_mean, self.history, self.alpha, len(self.history))


CSchedule = Union[float, Sequence[float], Callable[[int], float]]


@dataclass
class BrDragState:
    """Server-side state of BR-DRAG (also reused by FLTrust for its reference).

    ``batch_size=None`` runs full-batch steps on the root set.
    ``reducer`` is ``"mean"`` (plain SGD) or ``"trimmed_mean"`` over
    per-sample root gradients with ``trim`` cut from each tail.
    """

    root: LabeledDataset
    objective: Objective
    eta: float
    local_steps: int
    batch_size: Optional[int] = None
    c_t: CSchedule = 0.5
    reducer: str = "mean"
    trim: float = 0.1

    def __post_init__(self):
        if len(self.root) == 0:
            raise ConfigError("root dataset must be non-empty", field="root_size")
        if self.eta <= 0:
            raise ConfigError("eta must be > 0", field="stepsize")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1", field="local_steps")
        if self.reducer not in ("mean", "trimmed_mean"):
            raise ConfigError(f"unknown root reducer {self.reducer!r}", field="root_reducer")

    def c_at(self, t: int) -> float:
        if callable(self.c_t):
            c = float(self.c_t(t))
        elif isinstance(self.c_t, (int, float)):
            c = float(self.c_t)
        else:
            seq = list(self.c_t)
            c = float(seq[min(t, len(seq) - 1)])
        if not 0.0 <= c <= 1.0:
            raise ConfigError(f"c_t must lie in [0, 1], got {c} at round {t}", field="c_t")
        return c

    def _root_grad(self, theta, batch_idx):
        X = self.root.features if batch_idx is None else self.root.features[batch_idx]
        y = self.root.labels if batch_idx is None else self.root.labels[batch_idx]
        if self.reducer == "mean":
            return self.objective.grad(theta, X, y)
        per_sample = np.stack([self.objective.grad(theta, X[i:i + 1], y[i:i + 1]) for i in range(len(y))])
        k = int(np.floor(self.trim * len(y)))
        srt = np.sort(per_sample, axis=0)
        return srt[k:len(y) - k].mean(axis=0)


def root_reference(theta, st: BrDragState, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Displacement after ``U`` SGD steps on the root set, starting at ``theta``.

    ``theta`` itself is left untouched.
    """
    theta0 = as_vector(theta)
    local = theta0.copy()
    for _ in range(st.local_steps):
        if st.batch_size is None:
            idx = None
        else:
            if rng is None:
                raise ProtocolError("mini-batch root steps need an rng")
            idx = sample_batch(st.root, st.batch_size, rng).indices
        local = local - st.eta * st._root_grad(local, idx)
    return local - theta0


@dataclass
class DodReport:
    """Per-upload divergence statistics for one round (diagnostics only).

    ``cosines``/``ratios``/``lambdas`` follow upload order; ``malicious`` flags
    which uploads came from attackers.  Aggregates divide by the number of
    uploads ``S`` (not by group size): ``x`` sums attacker cosines, ``y``
    benign cosines, ``rho`` benign ``cos * ||r||/||g||``, and ``b`` benign
    ``(1 - lam) * ||r||/||g||``.
    """

    lambdas: np.ndarray
    cosines: np.ndarray
    ratios: np.ndarray
    malicious: np.ndarray

    @property
    def S(self) -> int:
        return len(self.lambdas)

    @property
    def x(self) -> float:
        return float(self.cosines[self.malicious].sum() / self.S)

    @property
    def y(self) -> float:
        return float(self.cosines[~self.malicious].sum() / self.S)

    @property
    def rho(self) -> float:
        ben = ~self.malicious
        return float((self.cosines[ben] * self.ratios[ben]).sum() / self.S)

    @property
    def b(self) -> float:
        ben = ~self.malicious
        return float(((1.0 - self.lambdas[ben]) * self.ratios[ben]).sum() / self.S)

    def benign_ratio_range(self):
        ratios = self.ratios[~self.malicious]
        ratios = ratios[np.isfinite(ratios)]
        if ratios.size == 0:
            return None, None
        return float(ratios.min()), float(ratios.max())


def dod_report(uploads: Sequence, r, c: float, malicious: Optional[Sequence[bool]] = None) -> DodReport:
    nr = norm2(r)
    lambdas, cosines, ratios = [], [], []
    for g in uploads:
        ng = norm2(g)
        cosines.append(cosine(g, r))
        lambdas.append(dod(g, r, c))
        ratios.append(nr / ng if ng > ZERO_NORM_EPS else np.inf)
    if malicious is None:
        malicious = [False] * len(lambdas)
    return DodReport(np.array(lambdas), np.array(cosines), np.array(ratios), np.asarray(malicious, dtype=bool))


def drag_aggregate(uploads: Sequence, r, c: float):
    """Modify every upload with DRAG and average; returns ``(delta, vs, lambdas)``."""
    lambdas = [dod(g, r, c) for g in uploads]
    vs = [modify_drag(g, r, lam) for g, lam in zip(uploads, lambdas)]
    return aggregate_modified(vs), vs, lambdas


def br_drag_aggregate(uploads: Sequence, r, c_t: float):
    """Modify every upload with BR-DRAG and average; returns ``(delta, vs, lambdas)``."""
    lambdas = [dod(g, r, c_t) for g in uploads]
    vs = [modify_br(g, r, lam) for g, lam in zip(uploads, lambdas)]
    return aggregate_modified(vs), vs, lambdas
