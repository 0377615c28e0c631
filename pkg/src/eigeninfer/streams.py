"""Deterministic, splittable random streams.

All randomness in this package flows through numpy's PCG64 generator.
Independent sub-streams are derived from a master seed and an integer
key path via ``numpy.random.SeedSequence(master, spawn_key=key)``, so
any entity (replicate, row, chain) gets its own stream regardless of
the order in which streams are created or consumed.
"""

from __future__ import annotations

import numpy as np


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under ``master_seed``.

    The same (master_seed, key) pair always yields an identical stream;
    distinct key paths yield statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(seed_or_rng) -> np.random.Generator:
    """Coerce an int seed or an existing Generator into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
