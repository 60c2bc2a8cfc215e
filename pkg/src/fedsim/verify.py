"""Independent oracles and the self-check suite behind ``fedsim verify``.

The oracles deliberately avoid the code paths they check: brute-force grid
search for the geometric median, central finite differences for gradients,
an explicit weighted sum for the moving-average reference.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import baselines, drag, tasks
from .config import FedConfig
from .vecmath import cosine, norm2


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.2f}s)"


# -- oracles -------------------------------------------------------------------

def grid_geomed(points, n: int = 400, refinements: int = 2, halo: float = 2.0):
    """Brute-force minimiser of ``sum_i ||x_i - y||`` over a 2-d grid.

    Searches an ``n x n`` grid over the bounding box, then re-grids around
    the best cell ``refinements`` more times.  Returns ``(y, objective)``.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.shape[1] != 2:
        raise ValueError("grid oracle is 2-d only")
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    best = None
    for _ in range(refinements + 1):
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        obj = np.zeros_like(gx)
        for px, py in P:
            obj += np.hypot(gx - px, gy - py)
        i, j = np.unravel_index(np.argmin(obj), obj.shape)
        best = (np.array([xs[i], ys[j]]), float(obj[i, j]))
        cell = span / (n - 1)
        lo, hi = best[0] - halo * cell, best[0] + halo * cell
        span = hi - lo
    return best


def finite_difference_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def relative_error(a, b) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def explicit_ema(g0, deltas, alpha):
    """Moving average written as an explicit weighted sum over history."""
    t = len(deltas)
    acc = (1 - alpha) ** t * np.asarray(g0, dtype=np.float64)
    for i, d in enumerate(deltas):
        acc = acc + alpha * (1 - alpha) ** (t - i - 1) * np.asarray(d)
    return acc


# -- checks ----------------------------------------------------------------------

def _timed(name, fn) -> CheckResult:
    tic = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing oracle is a failed check
        passed, detail = False, f"error: {exc!r}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - tic)


def check_algebra(n_draws: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_gain, worst_scale, range_ok, br_ok, br_tight_ok = 0.0, 0.0, True, True, True
    for _ in range(n_draws):
        d = int(rng.integers(2, 12))
        g, r = rng.normal(size=d), rng.normal(size=d)
        c = float(rng.uniform())
        lam = drag.dod(g, r, c)
        range_ok &= 0.0 <= lam <= 2 * c
        k, m = rng.uniform(0.1, 10, size=2)
        worst_scale = max(worst_scale, abs(drag.dod(k * g, m * r, c) - lam))
        v = drag.modify_drag(g, r, lam)
        rhat = r / norm2(r)
        gain = float(np.dot(v - g, rhat))
        expected = c * (1 - cosine(g, r)) ** 2 * norm2(g)
        worst_gain = max(worst_gain, abs(gain - expected))
        vb = drag.modify_br(g, r, lam)
        bound = (abs(1 - lam) + lam) * norm2(r)
        br_ok &= norm2(vb) <= bound * (1 + 1e-12)
        if lam <= 1:
            br_tight_ok &= norm2(vb) <= norm2(r) * (1 + 1e-12)
    passed = range_ok and worst_scale <= 1e-12 and worst_gain <= 1e-10 and br_ok and br_tight_ok
    return passed, (f"range={range_ok} scale_err={worst_scale:.1e} gain_err={worst_gain:.1e} "
                    f"br_bound={br_ok} br_tight={br_tight_ok}")


def check_closed_form(rounds: int = 100, dim: int = 10, alphas=(0.01, 0.25, 0.75), seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for alpha in alphas:
        g0 = rng.normal(size=dim)
        deltas = [rng.normal(size=dim) for _ in range(rounds)]
        r = g0.copy()
        for t in range(1, rounds + 1):
            r = drag.reference_step(r, deltas[t - 1], alpha)
            worst = max(worst, float(np.abs(r - explicit_ema(g0, deltas[:t], alpha)).max()))
            worst = max(worst, float(np.abs(r - drag.closed_form_reference(g0, deltas[:t], alpha, t)).max()))
    return worst <= 1e-9, f"max deviation {worst:.2e} over {rounds} rounds, alphas={list(alphas)}"


def check_weiszfeld(n_sets: int = 5, n_points: int = 7, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_gap, monotone = 0.0, True
    for _ in range(n_sets):
        P = rng.normal(size=(n_points, 2)) * rng.uniform(0.5, 3.0)
        res = baselines.weiszfeld(P, tol=1e-12, max_iter=100_000)
        trace = np.asarray(res.objective_trace)
        monotone &= bool(np.all(np.diff(trace) <= 1e-12 * trace[:-1]))
        _, grid_obj = grid_geomed(P)
        worst_gap = max(worst_gap, abs(baselines.geomed_objective(P, res.point) - grid_obj))
    return worst_gap <= 1e-3 and monotone, f"max objective gap {worst_gap:.2e}, monotone={monotone}"


def check_gradients(n_points: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = {}
    ds = tasks.make_synthetic_classification(60, 4, 3, 2.0, seed)
    suite = tasks.make_quadratic_suite(1, 5, seed, noise=0.5)
    cases = {
        "quadratic": (suite.objectives[0], suite.datasets[0]),
        "logistic": (tasks.MultinomialLogistic(4, 3), ds),
        "mlp": (tasks.TinyMLP(4, 3, hidden=16), ds),
    }
    for name, (obj, data) in cases.items():
        w = 0.0
        for _ in range(n_points):
            theta = rng.normal(size=obj.n_params)
            idx = rng.integers(0, len(data), size=10)
            X, y = data.features[idx], data.labels[idx]
            fd = finite_difference_grad(lambda th: obj.loss(th, X, y), theta)
            w = max(w, relative_error(fd, obj.grad(theta, X, y)))
        worst[name] = w
    passed = all(v <= 1e-5 for v in worst.values())
    return passed, " ".join(f"{k}={v:.1e}" for k, v in worst.items())


def check_fedavg_reduction(rounds: int = 50):
    from .engine import Simulation

    base = FedConfig(workers=12, selected=4, rounds=rounds, n_samples=600, n_features=6, n_classes=4)
    a = Simulation(base.replace(aggregator="fedavg"))
    b = Simulation(base.replace(aggregator="drag", c=0.0))
    worst = 0.0
    for _ in range(rounds):
        a.run_round()
        b.run_round()
        worst = max(worst, float(np.abs(a.state.theta - b.state.theta).max()))
    return worst <= 1e-12, f"max coordinate gap {worst:.1e} over {rounds} rounds"


CHECKS = {
    "algebra": check_algebra,
    "closed_form_reference": check_closed_form,
    "weiszfeld_grid": check_weiszfeld,
    "finite_differences": check_gradients,
    "drag_c0_equals_fedavg": check_fedavg_reduction,
}


def run_checks(names=None) -> List[CheckResult]:
    names = list(CHECKS) if names is None else names
    return [_timed(n, CHECKS[n]) for n in names]
