"""Command-line entry point: ``fedsim run | sweep | verify | export-plots | configs``.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
verification.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .config import SWEEPABLE, FedConfig, load_config, packaged_configs
from .engine import Simulation
from .exceptions import ConfigError

log = logging.getLogger("fedsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="paper_defaults",
                   help="INI config, run manifest (.json), or name of a packaged config")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="master seed; overrides all four random streams")
    p.add_argument("--aggregator")
    p.add_argument("--attack")
    p.add_argument("--ratio", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--threads", type=int, help="worker threads per experiment")


def _apply_overrides(cfg: FedConfig, args) -> FedConfig:
    changes = {k: getattr(args, k) for k in ("aggregator", "attack", "ratio", "beta", "rounds", "threads")
               if getattr(args, k) is not None}
    if changes:
        cfg = FedConfig.from_dict({**cfg.to_dict(), **changes})
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def execute_run(cfg: FedConfig, out_dir: Path, extra_manifest=None) -> Path:
    """Run one experiment into ``out_dir``: manifest first, then metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = metrics.new_manifest(cfg, out_dir, extra_manifest)
    metrics.write_manifest(manifest, out_dir)
    records = []
    try:
        with Simulation(cfg) as sim:
            for _ in range(cfg.rounds):
                records.append(sim.run_round())
    except BaseException as exc:
        metrics.write_metrics(records, out_dir / metrics.METRICS_NAME)
        metrics.finish_manifest(manifest, out_dir, "partial", error=str(exc))
        raise
    metrics.write_metrics(records, out_dir / metrics.METRICS_NAME)
    metrics.write_timings(records, out_dir / metrics.TIMINGS_NAME)
    metrics.finish_manifest(manifest, out_dir, "complete")
    return out_dir


def _default_out(config_arg: str) -> Path:
    return Path("runs") / Path(config_arg).stem


def cmd_run(args) -> int:
    cfg, _ = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    out = args.out or _default_out(args.config)
    execute_run(cfg, out)
    print(f"wrote {out / metrics.METRICS_NAME}")
    return EXIT_OK


def parse_grid(items) -> dict:
    grid = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--grid expects key=v1,v2,..., got {item!r}")
        key, vals = item.split("=", 1)
        key = key.strip()
        if key not in SWEEPABLE:
            raise ConfigError(f"{key!r} is not sweepable (choose from {', '.join(SWEEPABLE)})", field=key)
        grid[key] = [v.strip() for v in vals.split(",") if v.strip()]
    return grid


def expand_grid(base: FedConfig, grid: dict) -> list:
    """All ``(label, config)`` pairs of the Cartesian product, in a stable order."""
    keys = list(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = base
        changes = {}
        for k, v in zip(keys, combo):
            if k != "seed":
                changes[k] = v
        if changes:
            cfg = FedConfig.from_dict({**cfg.to_dict(), **changes})
        if "seed" in keys:
            cfg = cfg.with_seed(int(combo[keys.index("seed")]))
        label = "__".join(f"{k}={v}" for k, v in zip(keys, combo)) or "base"
        out.append((label, cfg))
    return out


def _sweep_job(job):
    label, cfg_dict, out_dir, point = job
    execute_run(FedConfig.from_dict(cfg_dict), Path(out_dir), {"sweep_point": point})
    return label


def _job_count(requested) -> int:
    n = requested or 1
    env = os.environ.get("FEDSIM_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    return n


def cmd_sweep(args) -> int:
    base, file_grid = load_config(args.config)
    base = _apply_overrides(base, args)
    grid = dict(file_grid)
    grid.update(parse_grid(args.grid))
    if args.seeds:
        grid["seed"] = [s.strip() for s in args.seeds.split(",") if s.strip()]
    if not grid:
        raise ConfigError("sweep needs a [sweep] section or at least one --grid")
    out = args.out or _default_out(args.config)
    runs = expand_grid(base, grid)
    out.mkdir(parents=True, exist_ok=True)
    index = {"grid": grid, "runs": [label for label, _ in runs]}
    (out / "sweep.json").write_text(json.dumps(index, indent=2) + "\n")
    jobs = [(label, cfg.to_dict(), str(out / label), dict(zip(grid, label.split("__")))) for label, cfg in runs]
    n = _job_count(args.jobs)
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            for label in ex.map(_sweep_job, jobs):
                log.info("finished %s", label)
    else:
        for job in jobs:
            _sweep_job(job)
    print(f"wrote {len(runs)} runs under {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import CHECKS, run_checks

    names = args.check or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check {unknown[0]!r} (choose from {', '.join(CHECKS)})")
    results = run_checks(names)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


PANEL_KEYS = ("objective", "attack", "ratio", "beta")
SEED_KEYS = ("seed_partition", "seed_selection", "seed_batch", "seed_attack")


def export_plots(in_dir, out_dir) -> list:
    """Turn a directory of runs into per-figure tidy CSVs (round vs. metric per series).

    Config keys that vary across runs (other than seeds) become either figure
    panels (objective, attack, ratio, beta) or curve series (everything else).
    Metrics are averaged over seeds.
    """
    runs = []
    for run_dir in metrics.iter_runs(in_dir):
        manifest = json.loads((run_dir / metrics.MANIFEST_NAME).read_text())
        mpath = run_dir / metrics.METRICS_NAME
        if not mpath.exists():
            continue
        runs.append((run_dir, manifest["config"], metrics.read_metrics(mpath)))
    if not runs:
        raise ConfigError(f"no runs with metrics found under {in_dir}")
    keys = [k for k in runs[0][1] if k not in SEED_KEYS and k != "threads"]
    varying = [k for k in keys if len({json.dumps(r[1].get(k)) for r in runs}) > 1]
    panels = [k for k in varying if k in PANEL_KEYS]
    series_keys = [k for k in varying if k not in PANEL_KEYS] or ["aggregator"]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tidy_path = out_dir / "tidy.csv"
    grouped = defaultdict(lambda: defaultdict(list))
    with open(tidy_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "figure", "series", "seed", "round", "test_accuracy", "train_loss", "benign_train_loss"])
        for run_dir, cfg, recs in runs:
            fig = "__".join(f"{k}={cfg[k]}" for k in panels) or "all"
            series = ",".join(f"{k}={cfg[k]}" for k in series_keys)
            seed = "/".join(str(cfg[k]) for k in SEED_KEYS)
            for rec in recs:
                w.writerow([run_dir.name, fig, series, seed, rec["round"],
                            *(metrics._csv_value(rec.get(k)) for k in ("test_accuracy", "train_loss", "benign_train_loss"))])
                grouped[fig][(series, rec["round"])].append(rec)
    written = [tidy_path]
    for fig, cells in sorted(grouped.items()):
        path = out_dir / f"figure__{fig}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "round", "n_seeds", "test_accuracy_mean", "test_accuracy_std",
                        "train_loss_mean", "train_loss_std", "benign_train_loss_mean"])
            for (series, rnd), recs in sorted(cells.items()):
                row = [series, rnd, len(recs)]
                for k, with_std in (("test_accuracy", True), ("train_loss", True), ("benign_train_loss", False)):
                    vals = [r[k] for r in recs if r.get(k) is not None]
                    if vals:
                        row.append(metrics._csv_value(float(np.mean(vals))))
                        if with_std:
                            row.append(metrics._csv_value(float(np.std(vals))))
                    else:
                        row.extend([""] * (2 if with_std else 1))
                w.writerow(row)
        written.append(path)
    return written


def cmd_export(args) -> int:
    for p in export_plots(args.input, args.out):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_configs(args) -> int:
    for name in packaged_configs():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single experiment")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    _add_overrides(p)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help=f"grid axis; sweepable keys: {', '.join(SWEEPABLE)}")
    p.add_argument("--seeds", help="comma-separated master seeds (shorthand for --grid seed=...)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent experiments (capped by FEDSIM_THREADS)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the oracle self-checks")
    p.add_argument("--check", action="append", help="run only this check (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-plots", help="aggregate run metrics into per-figure CSVs")
    p.add_argument("--in", dest="input", type=Path, required=True, help="run or sweep directory")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("configs", help="list packaged configs")
    p.set_defaults(func=cmd_configs)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
