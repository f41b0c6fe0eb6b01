"""Deterministic seed derivation.

Every source of randomness in the package is a numpy Generator derived
from a master seed plus a path of small integer tags (stage id, record
index, attempt, pass number, ...).  Identical (master seed, path) always
yields an identical stream, independent of call order, which is what the
reproducibility contracts of the reference tables, training and the
pipeline rely on.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed_sequence", "derive_rng", "derive_uint64"]


def derive_seed_sequence(master_seed: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for (master_seed, path); path entries must be uint32-like."""
    if master_seed < 0:
        raise ValueError("master seed must be nonnegative")
    return np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(p) for p in path))


def derive_rng(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(master_seed, *path))


def derive_uint64(master_seed: int, *path: int) -> int:
    """A single uint64 word for contexts that store one scalar seed per record."""
    return int(derive_seed_sequence(master_seed, *path).generate_state(1, np.uint64)[0])
