"""Comparison aggregators and their local-step rules.

Drift-mitigation baselines: FedAvg, FedProx, SCAFFOLD, FedExP, FedACG.
Byzantine-robust baselines: FLTrust, RFA and RAGA (the latter two via the
Weiszfeld geometric median).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import vecmath
from .exceptions import ConfigError, DimensionError, ProtocolError
from .vecmath import ZERO_NORM_EPS, as_vector, cosine, norm2


class GeoMedWarning(RuntimeWarning):
    pass


def fedavg_aggregate(uploads: Sequence) -> np.ndarray:
    if len(uploads) == 0:
        raise ProtocolError("cannot aggregate an empty set of uploads")
    return vecmath.mean(uploads)


# -- FedProx -----------------------------------------------------------------

def fedprox_local_step(theta_local, theta_global, grad, eta: float, mu: float) -> np.ndarray:
    """One proximal SGD step: ``theta - eta (grad + mu (theta - theta_global))``."""
    if mu < 0:
        raise ConfigError("mu must be >= 0", field="mu")
    theta_local, theta_global, grad = as_vector(theta_local), as_vector(theta_global), as_vector(grad)
    return theta_local - eta * (grad + mu * (theta_local - theta_global))


# -- SCAFFOLD ----------------------------------------------------------------

def scaffold_local_step(theta, grad, h_m, h, eta: float) -> np.ndarray:
    theta, grad, h_m, h = (as_vector(v) for v in (theta, grad, h_m, h))
    if not theta.shape == grad.shape == h_m.shape == h.shape:
        raise DimensionError("control variates must match the model dimension")
    return theta - eta * (grad - h_m + h)


@dataclass
class ScaffoldState:
    """Global control ``h`` and per-worker controls ``h_m`` (all start at zero)."""

    n_workers: int
    dim: int
    h: np.ndarray = None
    h_m: np.ndarray = None

    def __post_init__(self):
        if self.h is None:
            self.h = np.zeros(self.dim)
        if self.h_m is None:
            self.h_m = np.zeros((self.n_workers, self.dim))


def scaffold_update_controls(state: ScaffoldState, selected: Sequence[int], first_grads: Sequence) -> None:
    """Refresh controls from each selected worker's first stochastic gradient.

    ``h += (1/M) sum_sel (grad0_m - h_m)`` then ``h_m = grad0_m``; note the
    division by the total worker count ``M``.
    """
    if len(selected) != len(first_grads):
        raise ProtocolError("one first-step gradient per selected worker is required")
    correction = np.zeros(state.dim)
    for m, g0 in zip(selected, first_grads):
        correction += as_vector(g0) - state.h_m[m]
    state.h = state.h + correction / state.n_workers
    for m, g0 in zip(selected, first_grads):
        state.h_m[m] = as_vector(g0)


# -- FedExP ------------------------------------------------------------------

def fedexp_step(uploads: Sequence, eps: float):
    """Extrapolated FedAvg; returns ``(eta_g, delta)`` with ``eta_g >= 1``."""
    if eps <= 0:
        raise ConfigError("eps must be > 0", field="eps")
    if len(uploads) == 0:
        raise ProtocolError("cannot aggregate an empty set of uploads")
    mean = vecmath.mean(uploads)
    S = len(uploads)
    sq = sum(float(np.dot(g, g)) for g in uploads)
    eta_g = max(1.0, sq / (2.0 * S * (float(np.dot(mean, mean)) + eps)))
    return eta_g, eta_g * mean


# -- FedACG ------------------------------------------------------------------

@dataclass
class FedAcgState:
    dim: int
    beta: float = 0.2
    lam: float = 0.85
    momentum: np.ndarray = None

    def __post_init__(self):
        if self.beta < 0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError("FedACG needs beta >= 0 and lambda in [0, 1]", field="acg_lambda")
        if self.momentum is None:
            self.momentum = np.zeros(self.dim)

    def anchor(self, theta) -> np.ndarray:
        """Lookahead point ``theta + lam * m`` broadcast to workers."""
        return as_vector(theta) + self.lam * self.momentum


def fedacg_local_step(theta_local, anchor, grad, eta: float, beta: float) -> np.ndarray:
    """SGD step with the squared-distance penalty ``beta/2 ||theta - anchor||^2``."""
    theta_local, anchor, grad = as_vector(theta_local), as_vector(anchor), as_vector(grad)
    return theta_local - eta * (grad + beta * (theta_local - anchor))


def fedacg_round(state: FedAcgState, theta, local_train: Callable[[np.ndarray], Sequence]):
    """Run one FedACG round.

    ``local_train(anchor)`` must return the uploads ``g_m`` of the selected
    workers, each computed from the anchor.  Returns ``(theta_next, uploads)``;
    ``state.momentum`` becomes ``lam * m + mean(g)`` and the new model is
    ``theta + momentum``.
    """
    anchor = state.anchor(theta)
    uploads = list(local_train(anchor))
    state.momentum = state.lam * state.momentum + fedavg_aggregate(uploads)
    return as_vector(theta) + state.momentum, uploads


# -- FLTrust -----------------------------------------------------------------

def fltrust_modify(g, r) -> np.ndarray:
    """``max(0, cos(g, r)) * ||g|| * r / ||r||``; zero when ``r`` vanishes."""
    g, r = as_vector(g), as_vector(r)
    if g.shape != r.shape:
        raise DimensionError(f"length mismatch: {g.shape[0]} vs {r.shape[0]}")
    nr = norm2(r)
    if nr <= ZERO_NORM_EPS:
        return np.zeros_like(g)
    trust = max(0.0, cosine(g, r))
    return (trust * norm2(g) / nr) * r


def fltrust_aggregate(uploads: Sequence, r) -> np.ndarray:
    return fedavg_aggregate([fltrust_modify(g, r) for g in uploads])


# -- Geometric median ----------------------------------------------------------

class GeoMedResult(NamedTuple):
    point: np.ndarray
    n_iter: int
    converged: bool
    objective_trace: list


def geomed_objective(points, y) -> float:
    P = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(P - as_vector(y), axis=1).sum())


def weiszfeld(points: Sequence, tol: float = 1e-10, max_iter: int = 10_000,
              dist_floor: float = 1e-12) -> GeoMedResult:
    """Weiszfeld fixed-point iteration for the geometric median.

    Starts at the coordinate mean.  Distances are floored at ``dist_floor``
    so an iterate landing on a data point stays finite.  Returns the best
    iterate seen, with ``converged=False`` if ``max_iter`` ran out.
    """
    if len(points) == 0:
        raise ProtocolError("geometric median of an empty set")
    if tol <= 0:
        raise ConfigError("tol must be > 0", field="weiszfeld_tol")
    P = np.stack([as_vector(p) for p in points])
    y = P.mean(axis=0)
    best, best_obj = y, geomed_objective(P, y)
    trace = [best_obj]
    for it in range(1, max_iter + 1):
        w = 1.0 / np.maximum(np.linalg.norm(P - y, axis=1), dist_floor)
        y_new = (w[:, None] * P).sum(axis=0) / w.sum()
        step = float(np.linalg.norm(y_new - y))
        y = y_new
        obj = geomed_objective(P, y)
        trace.append(obj)
        if obj <= best_obj:
            best, best_obj = y, obj
        if step < tol:
            return GeoMedResult(best, it, True, trace)
    return GeoMedResult(best, max_iter, False, trace)


def weiszfeld_geomed(points: Sequence, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    res = weiszfeld(points, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(f"Weiszfeld stopped after {max_iter} iterations without converging", GeoMedWarning)
    return res.point


def rfa_aggregate(local_models: Sequence, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Next global model: geometric median of the local models."""
    return weiszfeld_geomed(local_models, tol, max_iter)


def raga_aggregate(local_updates: Sequence, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Global update: geometric median of the local updates."""
    return weiszfeld_geomed(local_updates, tol, max_iter)
