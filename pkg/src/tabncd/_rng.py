"""Seed plumbing shared by every stochastic routine."""
from __future__ import annotations

import numpy as np


def as_rng(seed=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for run ``keys`` under ``master``; stable across platforms."""
    entropy = [int(master) % (2**63)] + [int(k) % (2**63) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])
