"""Seeded counter-based random streams (Philox-4x64) for reproducible runs."""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream); distinct streams never overlap."""
    seed = int(seed)
    stream = int(stream)
    if not 0 <= seed <= MASK64 or not 0 <= stream <= MASK64:
        raise ValueError(f"seed and stream must be unsigned 64-bit integers, got {seed}, {stream}")
    return np.random.Generator(np.random.Philox(key=(stream << 64) | seed))
