"""Experiment configuration: the ``FedConfig`` record and its INI file format.

A config file has sections ``[federation]``, ``[aggregator]``, ``[attack]``,
``[data]``, ``[seeds]`` and ``[run]``; every key maps to one ``FedConfig``
field.  Unknown sections or keys are rejected.  An optional ``[sweep]``
section holds comma-separated value lists for grid runs.
"""
from __future__ import annotations

import configparser
import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple, Union

from .attacks import AttackKind
from .exceptions import ConfigError


class AggregatorKind(str, enum.Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    SCAFFOLD = "scaffold"
    FEDEXP = "fedexp"
    FEDACG = "fedacg"
    DRAG = "drag"
    BR_DRAG = "br_drag"
    FLTRUST = "fltrust"
    RFA = "rfa"
    RAGA = "raga"

    @classmethod
    def parse(cls, name: str) -> "AggregatorKind":
        key = name.lower().replace("-", "_")
        if key == "brdrag":
            key = "br_drag"
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown aggregator {name!r}", field="aggregator") from None

    @property
    def uses_root(self) -> bool:
        return self in (AggregatorKind.BR_DRAG, AggregatorKind.FLTRUST)


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class FedConfig:
    # federation
    workers: int = _f("federation", 40)
    selected: int = _f("federation", 10)
    rounds: int = _f("federation", 300)
    local_steps: int = _f("federation", 5)
    batch_size: int = _f("federation", 10)
    stepsize: float = _f("federation", 0.01)
    # aggregator
    aggregator: AggregatorKind = _f("aggregator", AggregatorKind.FEDAVG)
    alpha: float = _f("aggregator", 0.25)
    c: float = _f("aggregator", 0.1)
    c_t: Union[float, Tuple[float, ...]] = _f("aggregator", 0.5)
    mu: float = _f("aggregator", 0.2)
    eps: float = _f("aggregator", 0.001)
    acg_beta: float = _f("aggregator", 0.2)
    acg_lambda: float = _f("aggregator", 0.85)
    root_size: Optional[int] = _f("aggregator", None)
    root_reducer: str = _f("aggregator", "mean")
    weiszfeld_tol: float = _f("aggregator", 1e-10)
    weiszfeld_max_iter: int = _f("aggregator", 10_000)
    # attack
    attack: AttackKind = _f("attack", AttackKind.NONE)
    ratio: float = _f("attack", 0.0)
    noise_param: float = _f("attack", 3.0)
    noise_is_variance: bool = _f("attack", True)
    flip_fraction: float = _f("attack", 0.5)
    # data
    objective: str = _f("data", "logistic")
    dataset_csv: Optional[str] = _f("data", None)
    n_samples: int = _f("data", 4000)
    n_features: int = _f("data", 20)
    n_classes: int = _f("data", 10)
    class_separation: float = _f("data", 3.0)
    data_noise: float = _f("data", 1.0)
    hidden: int = _f("data", 16)
    beta: float = _f("data", 0.1)
    test_fraction: float = _f("data", 0.2)
    quad_dim: int = _f("data", 10)
    quad_heterogeneity: float = _f("data", 1.0)
    quad_noise: float = _f("data", 0.0)
    quad_init_scale: float = _f("data", 10.0)
    # seeds
    seed_partition: int = _f("seeds", 0)
    seed_selection: int = _f("seeds", 0)
    seed_batch: int = _f("seeds", 0)
    seed_attack: int = _f("seeds", 0)
    # run
    eval_every: int = _f("run", 1)
    threads: int = _f("run", 1)

    def __post_init__(self):
        object.__setattr__(self, "aggregator", AggregatorKind.parse(str(getattr(self.aggregator, "value", self.aggregator))))
        object.__setattr__(self, "attack", AttackKind.parse(str(getattr(self.attack, "value", self.attack))))
        if isinstance(self.c_t, (list, tuple)):
            object.__setattr__(self, "c_t", tuple(float(v) for v in self.c_t))
        self.validate()

    def validate(self) -> None:
        def need(cond, fieldname, msg):
            if not cond:
                raise ConfigError(f"{fieldname}: {msg}", field=fieldname)

        need(self.workers >= 1, "workers", "must be >= 1")
        need(1 <= self.selected <= self.workers, "selected", f"must satisfy 1 <= S <= M={self.workers}")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(self.local_steps >= 1, "local_steps", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.stepsize > 0, "stepsize", "must be > 0")
        need(0.0 < self.alpha < 1.0, "alpha", "must lie in (0, 1)")
        need(0.0 <= self.c <= 1.0, "c", "must lie in [0, 1]")
        cts = self.c_t if isinstance(self.c_t, tuple) else (self.c_t,)
        need(len(cts) >= 1 and all(0.0 <= v <= 1.0 for v in cts), "c_t", "must lie in [0, 1]")
        need(self.mu >= 0, "mu", "must be >= 0")
        need(self.eps > 0, "eps", "must be > 0")
        need(self.acg_beta >= 0, "acg_beta", "must be >= 0")
        need(0.0 <= self.acg_lambda <= 1.0, "acg_lambda", "must lie in [0, 1]")
        need(self.root_size is None or self.root_size >= 1, "root_size", "must be >= 1")
        need(self.root_reducer in ("mean", "trimmed_mean"), "root_reducer", "must be mean or trimmed_mean")
        need(self.weiszfeld_tol > 0, "weiszfeld_tol", "must be > 0")
        need(self.weiszfeld_max_iter >= 1, "weiszfeld_max_iter", "must be >= 1")
        need(0.0 <= self.ratio <= 1.0, "ratio", "must lie in [0, 1]")
        need(self.noise_param >= 0, "noise_param", "must be >= 0")
        need(0.0 <= self.flip_fraction <= 1.0, "flip_fraction", "must lie in [0, 1]")
        need(self.objective in ("logistic", "mlp", "quadratic"), "objective", "must be logistic, mlp or quadratic")
        need(self.n_classes >= 2, "n_classes", "must be >= 2")
        need(self.n_samples >= self.n_classes, "n_samples", "must be >= n_classes")
        need(self.n_features >= 1, "n_features", "must be >= 1")
        need(self.class_separation >= 0, "class_separation", "must be >= 0")
        need(self.data_noise >= 0, "data_noise", "must be >= 0")
        need(self.hidden >= 1, "hidden", "must be >= 1")
        need(self.beta > 0, "beta", "must be > 0")
        need(0.0 <= self.test_fraction < 1.0, "test_fraction", "must lie in [0, 1)")
        need(self.quad_dim >= 1, "quad_dim", "must be >= 1")
        need(self.quad_heterogeneity >= 0, "quad_heterogeneity", "must be >= 0")
        need(self.quad_noise >= 0, "quad_noise", "must be >= 0")
        for s in ("seed_partition", "seed_selection", "seed_batch", "seed_attack"):
            need(getattr(self, s) >= 0, s, "must be >= 0")
        need(self.eval_every >= 1, "eval_every", "must be >= 1")
        need(self.threads >= 1, "threads", "must be >= 1")

    def replace(self, **changes) -> "FedConfig":
        return dataclasses.replace(self, **changes)

    def with_seed(self, seed: int) -> "FedConfig":
        """Set all four random streams from one master seed."""
        return self.replace(seed_partition=seed, seed_selection=seed, seed_batch=seed, seed_attack=seed)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_sections(self) -> dict:
        sections: dict = {}
        for f in fields(self):
            sections.setdefault(f.metadata["section"], {})[f.name] = self.to_dict()[f.name]
        return sections

    def to_ini(self) -> str:
        lines = []
        for section, items in self.to_sections().items():
            lines.append(f"[{section}]")
            for k, v in items.items():
                lines.append(f"{k} = {_format_value(v)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; excludes execution-only fields."""
        d = self.to_dict()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "FedConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}", field=unknown[0])
        kwargs = {k: _coerce(cls, k, v) for k, v in data.items()}
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


FIELD_SECTIONS = {f.name: f.metadata["section"] for f in fields(FedConfig)}
SECTIONS = tuple(dict.fromkeys(FIELD_SECTIONS.values()))
SWEEPABLE = ("alpha", "c", "c_t", "beta", "ratio", "aggregator", "attack", "seed", "selected",
             "stepsize", "local_steps", "objective", "mu", "eps")


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(FedConfig)}


def _coerce(cls, name: str, raw):
    """Convert a raw value (string from INI, or JSON scalar) to the field's type."""
    default = next(f.default for f in fields(cls) if f.name == name)
    ftype = _FIELD_TYPES[name]
    if isinstance(raw, str):
        text = raw.strip()
        if text.lower() in ("none", "null", "") and "Optional" in str(ftype):
            return None
    else:
        text = None
    try:
        if name == "c_t":
            if isinstance(raw, (list, tuple)):
                vals = [float(v) for v in raw]
            elif text is not None:
                vals = [float(v) for v in text.split(",") if v.strip()]
            else:
                vals = [float(raw)]
            return vals[0] if len(vals) == 1 else tuple(vals)
        if isinstance(default, bool):
            if text is None:
                return bool(raw)
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if name == "root_size" or isinstance(default, int) and not isinstance(default, bool):
            if raw is None:
                return None
            if text is None:
                if isinstance(raw, float) and not raw.is_integer():
                    raise ValueError(f"not an integer: {raw!r}")
                return int(raw)
            return int(text)
        if isinstance(default, float):
            return float(raw if text is None else text)
        if name in ("aggregator", "attack", "objective", "root_reducer", "dataset_csv"):
            if raw is None:
                return None
            return str(raw if text is None else text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}", field=name) from None
    return raw


def parse_config_text(text: str, source: str = "<string>"):
    """Parse INI text; returns ``(FedConfig, sweep_grid)``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    values = {}
    grid = {}
    for section in parser.sections():
        if section == "sweep":
            for key, raw in parser.items(section):
                if key not in SWEEPABLE:
                    raise ConfigError(f"{source}: [sweep] key {key!r} is not sweepable", field=key)
                grid[key] = [v.strip() for v in raw.split(",") if v.strip()]
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]", field=section)
        for key, raw in parser.items(section):
            if key not in FIELD_SECTIONS:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]", field=key)
            if FIELD_SECTIONS[key] != section:
                raise ConfigError(f"{source}: key {key!r} belongs in [{FIELD_SECTIONS[key]}], not [{section}]", field=key)
            values[key] = raw
    try:
        cfg = FedConfig.from_dict(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}", field=exc.field) from None
    return cfg, grid


def parse_config(path) -> FedConfig:
    """Load a config from an INI file, or from the snapshot in a run manifest (``.json``)."""
    return load_config(path)[0]


def load_config(path):
    """Like :func:`parse_config` but also returns the ``[sweep]`` grid (empty for manifests)."""
    path = Path(path)
    if not path.exists():
        packaged = Path(__file__).parent / "configs" / f"{path.name}.ini"
        if path.suffix == "" and packaged.exists():
            path = packaged
        else:
            raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from None
        snapshot = data.get("config", data)
        return FedConfig.from_dict(snapshot), {}
    return parse_config_text(text, source=str(path))


def packaged_configs() -> list:
    return sorted(p.stem for p in (Path(__file__).parent / "configs").glob("*.ini"))
