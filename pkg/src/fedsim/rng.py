"""Seeded random streams keyed by (seed, purpose, ids...).

Every consumer gets its own generator derived by hashing its key through
``numpy.random.SeedSequence``, so results never depend on the order in which
workers are scheduled.
"""
from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    PARTITION = 1
    SPLIT = 2
    MODEL_INIT = 3
    DATA = 4
    SELECTION = 10
    BATCH = 20
    ROOT_BATCH = 21
    ROOT_BUILD = 22
    ASSIGN = 30
    NOISE = 31
    LABEL_FLIP = 32


def stream(seed: int, purpose: Purpose, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    entropy = [int(seed), int(purpose), *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
