"""Dense float64 vector primitives shared by every aggregation rule.

Parameter vectors are plain 1-d ``numpy.ndarray`` objects of dtype float64.
Nothing here mutates its inputs.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import DimensionError

ZERO_NORM_EPS = 1e-12


def as_vector(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    _check_same_length(a, b)
    return float(np.dot(a, b))


def norm2(a) -> float:
    a = as_vector(a)
    return float(np.sqrt(np.dot(a, a)))


def cosine(a, b, eps: float = ZERO_NORM_EPS) -> float:
    """Cosine similarity clamped to [-1, 1]; 0 when either norm is <= ``eps``."""
    a, b = as_vector(a), as_vector(b)
    _check_same_length(a, b)
    na, nb = norm2(a), norm2(b)
    if na <= eps or nb <= eps:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        cos = np.dot(a, b) / (na * nb)
    if not np.isfinite(cos):
        # overflow in the norms; rescale by the largest entry and retry
        a, b = a / np.abs(a).max(), b / np.abs(b).max()
        cos = np.dot(a, b) / (norm2(a) * norm2(b))
    return float(min(1.0, max(-1.0, cos)))


def linear_combine(coeffs: Sequence[float], vecs: Sequence) -> np.ndarray:
    """Return ``sum_i coeffs[i] * vecs[i]``, accumulated strictly in input order."""
    if len(coeffs) != len(vecs):
        raise DimensionError(f"{len(coeffs)} coefficients for {len(vecs)} vectors")
    if not vecs:
        raise DimensionError("linear_combine needs at least one vector")
    vecs = [as_vector(v) for v in vecs]
    out = np.zeros_like(vecs[0])
    for k, v in zip(coeffs, vecs):
        _check_same_length(out, v)
        out += float(k) * v
    return out


def mean(vecs: Sequence) -> np.ndarray:
    """Sequential-order mean, bit-reproducible for a fixed input order."""
    n = len(vecs)
    if n == 0:
        raise DimensionError("mean of an empty sequence")
    total = np.zeros_like(as_vector(vecs[0]))
    for v in vecs:
        v = as_vector(v)
        _check_same_length(total, v)
        total += v
    return total / n
