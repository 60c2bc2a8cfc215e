"""Round-loop orchestration for DRAG, BR-DRAG and every baseline.

Randomness comes from four independent seeds (partition, selection, batch,
attack).  Each consumer draws from its own stream keyed by
``(seed, purpose, worker, round, pass)``, so a run is reproducible for any
degree of parallelism and changing one seed never perturbs another stream.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import attacks, baselines, drag, tasks
from .attacks import AttackKind, AttackPlan
from .config import AggregatorKind, FedConfig
from .exceptions import ConfigError, ProtocolError, RoundError
from .rng import Purpose, stream
from .tasks import LabeledDataset, Objective, sample_batch
from .vecmath import as_vector, norm2


@dataclass
class Worker:
    id: int
    objective: Objective
    data: LabeledDataset  # what local SGD trains on (possibly label-flipped)
    clean: LabeledDataset  # untouched data, used to score the benign objective
    malicious: bool = False


@dataclass
class Problem:
    """Everything a run needs besides the config: data, objectives, init point."""

    workers: List[Worker]
    theta0: np.ndarray
    plan: AttackPlan
    test_set: Optional[LabeledDataset] = None
    eval_objective: Optional[Objective] = None
    root_objective: Optional[Objective] = None
    root: Optional[LabeledDataset] = None
    root_full_batch: bool = False
    optimal_loss: Optional[float] = None
    optimum: Optional[np.ndarray] = None


@dataclass
class RoundRecord:
    round: int
    train_loss: Optional[float]
    benign_train_loss: Optional[float]
    train_accuracy: Optional[float]
    test_loss: Optional[float]
    test_accuracy: Optional[float]
    opt_gap: Optional[float]
    delta_norm: float
    lambda_mean: Optional[float]
    lambda_max: Optional[float]
    x: Optional[float]
    y: Optional[float]
    rho: Optional[float]
    b: Optional[float]
    rho_min: Optional[float]
    rho_max: Optional[float]
    w: float
    selected: List[int]
    wall_time: float = 0.0

    @classmethod
    def metric_fields(cls) -> list:
        """Keys written to metric files; wall time is excluded to keep them reproducible."""
        return [f.name for f in fields(cls) if f.name != "wall_time"]

    def as_dict(self, include_timing: bool = False) -> dict:
        keys = [f.name for f in fields(self)] if include_timing else self.metric_fields()
        return {k: getattr(self, k) for k in keys}


# --------------------------------------------------------------------------
# Problem construction


def build_attack_plan(cfg: FedConfig) -> AttackPlan:
    if cfg.attack is AttackKind.NONE or cfg.ratio == 0:
        malicious = frozenset()
    else:
        malicious = attacks.assign_malicious(cfg.workers, cfg.ratio, stream(cfg.seed_attack, Purpose.ASSIGN))
    return AttackPlan(malicious, cfg.attack, cfg.ratio, cfg.noise_param, cfg.noise_is_variance, cfg.flip_fraction)


def default_root_size(n_train: int) -> int:
    return max(1, min(3000, int(round(0.1 * n_train))))


def build_root(pool: LabeledDataset, size: int, rng: np.random.Generator) -> LabeledDataset:
    """Class-balanced sample (without replacement) of ``size`` rows from ``pool``."""
    size = min(size, len(pool))
    by_class = {k: rng.permutation(np.flatnonzero(pool.labels == k)) for k in range(pool.n_classes)}
    present = [k for k in range(pool.n_classes) if by_class[k].size]
    quota = {k: size // len(present) for k in present}
    for k in rng.permutation(present)[: size - sum(quota.values())]:
        quota[int(k)] += 1
    chosen, leftovers = [], []
    for k in present:
        take = min(quota[k], by_class[k].size)
        chosen.append(by_class[k][:take])
        leftovers.append(by_class[k][take:])
    chosen = np.concatenate(chosen)
    short = size - chosen.size
    if short > 0:
        rest = rng.permutation(np.concatenate(leftovers))
        chosen = np.concatenate([chosen, rest[:short]])
    return pool.subset(np.sort(chosen))


def _concat(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    return LabeledDataset(np.concatenate([d.features for d in datasets]),
                          np.concatenate([d.labels for d in datasets]), datasets[0].n_classes)


def build_problem(cfg: FedConfig) -> Problem:
    plan = build_attack_plan(cfg)
    if cfg.objective == "quadratic":
        return _build_quadratic(cfg, plan)
    return _build_classification(cfg, plan)


def _build_quadratic(cfg: FedConfig, plan: AttackPlan) -> Problem:
    suite = tasks.make_quadratic_suite(cfg.workers, cfg.quad_dim, cfg.seed_partition,
                                       heterogeneity=cfg.quad_heterogeneity, noise=cfg.quad_noise)
    workers = [Worker(m, obj, ds, ds, m in plan.malicious)
               for m, (obj, ds) in enumerate(zip(suite.objectives, suite.datasets))]
    theta0 = suite.optimum + cfg.quad_init_scale * np.ones(cfg.quad_dim)
    # the global objective's gradient is exactly A_mean (theta - optimum)
    root = LabeledDataset(suite.optimum[None, :], np.zeros(1, dtype=np.int64), 1)
    return Problem(workers, theta0, plan, root_objective=tasks.HeterogeneousQuadratic(suite.A_mean),
                   root=root, root_full_batch=True, optimal_loss=suite.optimal_loss(), optimum=suite.optimum)


def _build_classification(cfg: FedConfig, plan: AttackPlan) -> Problem:
    if cfg.dataset_csv:
        full = tasks.load_csv_dataset(cfg.dataset_csv)
    else:
        data_seed = int(stream(cfg.seed_partition, Purpose.DATA).integers(2**63))
        full = tasks.make_synthetic_classification(cfg.n_samples, cfg.n_features, cfg.n_classes,
                                                   cfg.class_separation, data_seed, noise=cfg.data_noise)
    return classification_problem(cfg, full, plan)


def classification_problem(cfg: FedConfig, full: LabeledDataset, plan: Optional[AttackPlan] = None) -> Problem:
    """Split, partition and (for malicious workers) poison an in-memory dataset."""
    plan = plan if plan is not None else build_attack_plan(cfg)
    train, test = tasks.train_test_split(full, cfg.test_fraction, stream(cfg.seed_partition, Purpose.SPLIT))
    parts = tasks.dirichlet_partition(train, cfg.workers, cfg.beta, stream(cfg.seed_partition, Purpose.PARTITION))
    obj = tasks.make_objective(cfg.objective, full.n_features, full.n_classes, cfg.hidden)
    workers = []
    for m, part in enumerate(parts):
        data = part
        bad = m in plan.malicious
        if bad and plan.kind is AttackKind.LABEL_FLIP:
            data = attacks.label_flip(part, plan.flip_fraction, stream(cfg.seed_attack, Purpose.LABEL_FLIP, m))
        workers.append(Worker(m, obj, data, part, bad))
    root = None
    if cfg.aggregator.uses_root:
        pool = _concat([w.clean for w in workers if not w.malicious] or [w.clean for w in workers])
        size = cfg.root_size or default_root_size(len(train))
        root = build_root(pool, size, stream(cfg.seed_partition, Purpose.ROOT_BUILD))
    theta0 = obj.init_params(stream(cfg.seed_partition, Purpose.MODEL_INIT))
    return Problem(workers, theta0, plan, test_set=test if len(test) else None, eval_objective=obj,
                   root_objective=obj, root=root)


# --------------------------------------------------------------------------
# Round primitives


def select_workers(n_workers: int, n_selected: int, rng: np.random.Generator) -> List[int]:
    """``n_selected`` distinct ids uniformly at random, returned in ascending order."""
    if not 1 <= n_selected <= n_workers:
        raise ConfigError(f"cannot select {n_selected} of {n_workers} workers", field="selected")
    return sorted(int(i) for i in rng.choice(n_workers, size=n_selected, replace=False))


StepRule = Callable[[np.ndarray, np.ndarray], np.ndarray]


def local_train(worker: Worker, theta, local_steps: int, batch_size: int, eta: float,
                rng: np.random.Generator, step: Optional[StepRule] = None):
    """Run ``local_steps`` SGD steps from ``theta``; return ``(g, first_grad)``.

    ``g = theta_U - theta``.  ``step(theta_local, grad)`` overrides the plain
    update ``theta_local - eta * grad`` (FedProx, SCAFFOLD, FedACG).
    """
    start = as_vector(theta)
    local = start.copy()
    first_grad = None
    for u in range(local_steps):
        batch = sample_batch(worker.data, batch_size, rng)
        grad = worker.objective.batch_grad(local, worker.data, batch)
        if u == 0:
            first_grad = grad
        local = local - eta * grad if step is None else step(local, grad)
    return local - start, first_grad


def _thread_count(cfg: FedConfig) -> int:
    """``cfg.threads``, capped by the ``FEDSIM_THREADS`` environment variable."""
    n = cfg.threads
    env = os.environ.get("FEDSIM_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"FEDSIM_THREADS must be an integer, got {env!r}", field="threads") from None
    return n


@dataclass
class GlobalState:
    theta: np.ndarray
    round: int = 0
    drag: Optional[drag.DragState] = None
    br: Optional[drag.BrDragState] = None
    scaffold: Optional[baselines.ScaffoldState] = None
    fedacg: Optional[baselines.FedAcgState] = None


class Simulation:
    """One federated experiment; call :meth:`run_round` repeatedly or :meth:`run`.

    Hooks for instrumentation: ``on_upload(round, worker_id, raw_g, sent_g)``
    fires for every upload after attack transforms.
    """

    def __init__(self, cfg: FedConfig, problem: Optional[Problem] = None, threads: Optional[int] = None,
                 c_schedule: Optional[Callable[[int], float]] = None):
        self.cfg = cfg
        self.problem = problem if problem is not None else build_problem(cfg)
        self.threads = threads if threads is not None else _thread_count(cfg)
        self.on_upload = None
        dim = self.problem.theta0.shape[0]
        st = GlobalState(theta=self.problem.theta0.copy())
        kind = cfg.aggregator
        if kind is AggregatorKind.DRAG:
            st.drag = drag.DragState(alpha=cfg.alpha, c=cfg.c)
        elif kind.uses_root:
            if self.problem.root is None:
                raise ConfigError(f"{kind.value} needs a root dataset", field="root_size")
            st.br = drag.BrDragState(root=self.problem.root, objective=self.problem.root_objective,
                                     eta=cfg.stepsize, local_steps=cfg.local_steps,
                                     batch_size=None if self.problem.root_full_batch else cfg.batch_size,
                                     c_t=c_schedule if c_schedule is not None else cfg.c_t,
                                     reducer=cfg.root_reducer)
        elif kind is AggregatorKind.SCAFFOLD:
            st.scaffold = baselines.ScaffoldState(cfg.workers, dim)
        elif kind is AggregatorKind.FEDACG:
            st.fedacg = baselines.FedAcgState(dim, beta=cfg.acg_beta, lam=cfg.acg_lambda)
        self.state = st
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- uploads ------------------------------------------------------------

    def _step_rule(self, m: int, theta_global: np.ndarray) -> Optional[StepRule]:
        cfg, st = self.cfg, self.state
        kind = cfg.aggregator
        if kind is AggregatorKind.FEDPROX:
            return lambda th, g: baselines.fedprox_local_step(th, theta_global, g, cfg.stepsize, cfg.mu)
        if kind is AggregatorKind.SCAFFOLD:
            h_m, h = st.scaffold.h_m[m].copy(), st.scaffold.h.copy()
            return lambda th, g: baselines.scaffold_local_step(th, g, h_m, h, cfg.stepsize)
        if kind is AggregatorKind.FEDACG:
            beta = st.fedacg.beta
            return lambda th, g: baselines.fedacg_local_step(th, theta_global, g, cfg.stepsize, beta)
        return None

    def _one_upload(self, m: int, theta: np.ndarray, t: int, pass_no: int):
        cfg, plan = self.cfg, self.problem.plan
        worker = self.problem.workers[m]
        rng = stream(cfg.seed_batch, Purpose.BATCH, m, t, pass_no)
        g, first = local_train(worker, theta, cfg.local_steps, cfg.batch_size, cfg.stepsize, rng,
                               self._step_rule(m, theta))
        sent = g
        if plan.is_malicious(m):
            if plan.kind is AttackKind.SIGN_FLIP:
                sent = attacks.sign_flip(g)
            elif plan.kind is AttackKind.NOISE:
                sent = attacks.noise_inject(g, stream(cfg.seed_attack, Purpose.NOISE, m, t, pass_no), plan.noise_std)
        return g, sent, first

    def collect_uploads(self, selected: Sequence[int], theta: np.ndarray, t: int, pass_no: int = 0):
        """Uploads of ``selected`` (ascending id order) and their first-step gradients."""
        job = lambda m: self._one_upload(m, theta, t, pass_no)
        results = list(self._pool.map(job, selected)) if self._pool else [job(m) for m in selected]
        if self.on_upload is not None:
            for m, (g, sent, _) in zip(selected, results):
                self.on_upload(t, m, g, sent)
        return [r[1] for r in results], [r[2] for r in results]

    # -- round --------------------------------------------------------------

    def run_round(self) -> RoundRecord:
        t = self.state.round
        try:
            return self._run_round(t)
        except RoundError:
            raise
        except Exception as exc:
            raise RoundError(t, exc) from exc

    def _run_round(self, t: int) -> RoundRecord:
        cfg, st, plan = self.cfg, self.state, self.problem.plan
        kind = cfg.aggregator
        tic = time.perf_counter()
        selected = select_workers(cfg.workers, cfg.selected, stream(cfg.seed_selection, Purpose.SELECTION, t))
        flags = [plan.is_malicious(m) for m in selected]
        theta = st.theta
        report, c_used = None, None

        if kind is AggregatorKind.DRAG:
            if not st.drag.initialized:
                # seeding pass; it draws from pass 1 so the update pass matches FedAvg's batches
                seed_uploads, _ = self.collect_uploads(selected, theta, t, pass_no=1)
                st.drag.init_reference(seed_uploads)
            else:
                st.drag.advance_reference()
            r = st.drag.r
            uploads, _ = self.collect_uploads(selected, theta, t)
            delta, _, _ = drag.drag_aggregate(uploads, r, cfg.c)
            st.drag.record_aggregate(delta)
            report, c_used = drag.dod_report(uploads, r, cfg.c, flags), cfg.c
            new_theta = theta + delta
        elif kind.uses_root:
            r = drag.root_reference(theta, st.br, stream(cfg.seed_batch, Purpose.ROOT_BATCH, t))
            uploads, _ = self.collect_uploads(selected, theta, t)
            if kind is AggregatorKind.BR_DRAG:
                c_used = st.br.c_at(t)
                delta, _, _ = drag.br_drag_aggregate(uploads, r, c_used)
                report = drag.dod_report(uploads, r, c_used, flags)
            else:
                delta = baselines.fltrust_aggregate(uploads, r)
                report = drag.dod_report(uploads, r, 0.0, flags)
            new_theta = theta + delta
        elif kind is AggregatorKind.FEDACG:
            new_theta, _ = baselines.fedacg_round(st.fedacg, theta,
                                                  lambda anchor: self.collect_uploads(selected, anchor, t)[0])
            delta = new_theta - theta
        else:
            uploads, first_grads = self.collect_uploads(selected, theta, t)
            if kind is AggregatorKind.FEDEXP:
                _, delta = baselines.fedexp_step(uploads, cfg.eps)
                new_theta = theta + delta
            elif kind is AggregatorKind.RFA:
                new_theta = baselines.rfa_aggregate([theta + g for g in uploads], cfg.weiszfeld_tol,
                                                    cfg.weiszfeld_max_iter)
                delta = new_theta - theta
            elif kind is AggregatorKind.RAGA:
                delta = baselines.raga_aggregate(uploads, cfg.weiszfeld_tol, cfg.weiszfeld_max_iter)
                new_theta = theta + delta
            else:
                delta = baselines.fedavg_aggregate(uploads)
                new_theta = theta + delta
                if kind is AggregatorKind.SCAFFOLD:
                    baselines.scaffold_update_controls(st.scaffold, selected, first_grads)

        if not np.all(np.isfinite(new_theta)):
            raise ProtocolError("global model became non-finite")
        st.theta = new_theta
        st.round = t + 1
        return self._record(t, selected, delta, report, kind, tic)

    # -- metrics ------------------------------------------------------------

    def evaluate(self, theta=None) -> dict:
        """Global (clean) training loss, benign-worker loss, accuracies and optimality gap."""
        theta = self.state.theta if theta is None else theta
        prob = self.problem
        losses, correct, total = [], 0, 0
        benign = []
        for w in prob.workers:
            loss, acc = tasks.evaluate(w.objective, theta, w.clean)
            losses.append(loss)
            if not w.malicious:
                benign.append(loss)
            if acc is not None:
                correct += acc * len(w.clean)
                total += len(w.clean)
        out = {
            "train_loss": float(np.mean(losses)),
            "benign_train_loss": float(np.mean(benign)) if benign else None,
            "train_accuracy": correct / total if total else None,
            "test_loss": None,
            "test_accuracy": None,
            "opt_gap": None,
        }
        if prob.test_set is not None and prob.eval_objective is not None:
            out["test_loss"], out["test_accuracy"] = tasks.evaluate(prob.eval_objective, theta, prob.test_set)
        if prob.optimal_loss is not None:
            out["opt_gap"] = out["train_loss"] - prob.optimal_loss
        return out

    def _record(self, t, selected, delta, report, kind, tic) -> RoundRecord:
        cfg = self.cfg
        if (t + 1) % cfg.eval_every == 0 or t + 1 == cfg.rounds:
            metrics = self.evaluate()
        else:
            metrics = dict.fromkeys(["train_loss", "benign_train_loss", "train_accuracy",
                                     "test_loss", "test_accuracy", "opt_gap"])
        diag = dict.fromkeys(["lambda_mean", "lambda_max", "x", "y", "rho", "b", "rho_min", "rho_max"])
        if report is not None:
            if kind is not AggregatorKind.FLTRUST:
                diag["lambda_mean"] = float(report.lambdas.mean())
                diag["lambda_max"] = float(report.lambdas.max())
                diag["b"] = report.b
            diag["x"], diag["y"], diag["rho"] = report.x, report.y, report.rho
            diag["rho_min"], diag["rho_max"] = report.benign_ratio_range()
        return RoundRecord(round=t, **metrics, delta_norm=norm2(delta), **diag,
                           w=self.problem.plan.intensity(selected), selected=list(selected),
                           wall_time=time.perf_counter() - tic)

    def run(self, rounds: Optional[int] = None) -> List[RoundRecord]:
        rounds = self.cfg.rounds if rounds is None else rounds
        return [self.run_round() for _ in range(rounds)]


def run_experiment(cfg: FedConfig, threads: Optional[int] = None, problem: Optional[Problem] = None) -> List[RoundRecord]:
    with Simulation(cfg, problem=problem, threads=threads) as sim:
        return sim.run()

