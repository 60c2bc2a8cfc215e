"""Metric files (JSON Lines plus a CSV twin) and the run manifest.

Floats are written with 17 significant digits in both files so they carry
identical values and round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import __version__
from .config import FedConfig
from .engine import RoundRecord

MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.jsonl"
CSV_NAME = "metrics.csv"
TIMINGS_NAME = "timings.csv"


def format_float(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"refusing to serialise non-finite value {v!r}")
    return format(v, ".17g")


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_json_value(x) for x in v) + "]"
    return json.dumps(v)


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def record_to_json(rec: RoundRecord, include_timing: bool = False) -> str:
    d = rec.as_dict(include_timing)
    return "{" + ",".join(f"{json.dumps(k)}:{_json_value(v)}" for k, v in d.items()) + "}"


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_metrics(records: Sequence[RoundRecord], path, csv_path=None) -> tuple:
    """Write ``records`` as JSON Lines to ``path`` and as CSV next to it.

    Returns ``(jsonl_path, csv_path)``.  Errors name the offending path.
    """
    path = Path(path)
    csv_path = Path(csv_path) if csv_path is not None else path.with_suffix(".csv")
    keys = RoundRecord.metric_fields()
    jsonl = "".join(record_to_json(r) + "\n" for r in records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys)
    for r in records:
        d = r.as_dict()
        writer.writerow([_csv_value(d[k]) for k in keys])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, jsonl)
        _atomic_write(csv_path, buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write metrics to {exc.filename or path}: {exc.strerror}") from exc
    return path, csv_path


def write_timings(records: Sequence[RoundRecord], path) -> None:
    lines = ["round,wall_time\n"] + [f"{r.round},{r.wall_time:.6f}\n" for r in records]
    _atomic_write(Path(path), "".join(lines))


def read_metrics(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def new_manifest(cfg: FedConfig, out_dir, extra: Optional[dict] = None) -> dict:
    out_dir = Path(out_dir)
    m = {
        "artifact": "fedsim",
        "version": __version__,
        "status": "running",
        "started": _now(),
        "finished": None,
        "config_hash": cfg.digest(),
        "seeds": {k: getattr(cfg, k) for k in ("seed_partition", "seed_selection", "seed_batch", "seed_attack")},
        "config": cfg.to_dict(),
        "outputs": {
            "metrics": str(out_dir / METRICS_NAME),
            "csv": str(out_dir / CSV_NAME),
            "timings": str(out_dir / TIMINGS_NAME),
        },
        "error": None,
    }
    if extra:
        m.update(extra)
    return m


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    return path


def finish_manifest(manifest: dict, out_dir, status: str, error: Optional[str] = None) -> Path:
    manifest = dict(manifest, status=status, finished=_now(), error=error)
    return write_manifest(manifest, out_dir)


def iter_runs(root) -> Iterable[Path]:
    """Directories under ``root`` (recursively) that contain a manifest."""
    for p in sorted(Path(root).rglob(MANIFEST_NAME)):
        yield p.parent
