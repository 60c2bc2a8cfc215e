"""Byzantine worker designation and the three attack transforms.

Noise injection and sign flipping rewrite an attacker's upload after local
training; label flipping rewrites its dataset once, before training starts.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .tasks import LabeledDataset
from .vecmath import as_vector


class AttackKind(str, enum.Enum):
    NONE = "none"
    NOISE = "noise"
    SIGN_FLIP = "sign_flip"
    LABEL_FLIP = "label_flip"

    @classmethod
    def parse(cls, name: str) -> "AttackKind":
        aliases = {"noise_injection": "noise", "signflip": "sign_flip", "sign-flip": "sign_flip",
                   "labelflip": "label_flip", "label-flip": "label_flip"}
        name = aliases.get(name.lower(), name.lower())
        try:
            return cls(name)
        except ValueError:
            raise ConfigError(f"unknown attack {name!r}", field="attack") from None


@dataclass(frozen=True)
class AttackPlan:
    malicious: frozenset
    kind: AttackKind
    ratio: float
    noise_param: float = 3.0
    noise_param_is_variance: bool = True
    flip_fraction: float = 0.5

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_param) if self.noise_param_is_variance else self.noise_param

    def is_malicious(self, m: int) -> bool:
        return self.kind is not AttackKind.NONE and m in self.malicious

    def intensity(self, selected) -> float:
        """Fraction of the selected workers that are attackers."""
        if self.kind is AttackKind.NONE or not selected:
            return 0.0
        return sum(1 for m in selected if m in self.malicious) / len(selected)


def n_malicious(n_workers: int, ratio: float) -> int:
    return int(math.floor(ratio * n_workers + 0.5))


def assign_malicious(n_workers: int, ratio: float, rng) -> frozenset:
    """Uniformly pick ``round(ratio * M)`` attacker ids without replacement."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"attack ratio must lie in [0, 1], got {ratio}", field="ratio")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    k = n_malicious(n_workers, ratio)
    return frozenset(int(i) for i in rng.choice(n_workers, size=k, replace=False))


def draw_noise_scale(rng: np.random.Generator, std: float) -> float:
    return float(rng.normal(0.0, std))


def noise_inject(g, rng: np.random.Generator, std: float = math.sqrt(3.0)) -> np.ndarray:
    """Scale the whole upload by one Gaussian scalar ``p ~ N(0, std^2)``."""
    return draw_noise_scale(rng, std) * as_vector(g)


def sign_flip(g) -> np.ndarray:
    return -as_vector(g)


def label_flip(ds: LabeledDataset, fraction: float, rng: np.random.Generator) -> LabeledDataset:
    """Map label ``l`` to ``L - l - 1`` on a uniformly chosen ``fraction`` of rows."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"flip fraction must lie in [0, 1], got {fraction}", field="flip_fraction")
    n = len(ds)
    k = int(math.floor(fraction * n + 0.5))
    idx = rng.choice(n, size=k, replace=False)
    labels = ds.labels.copy()
    labels[idx] = ds.n_classes - labels[idx] - 1
    return ds.with_labels(labels)
