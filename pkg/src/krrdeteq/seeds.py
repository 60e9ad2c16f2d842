"""Counter-based seed derivation for reproducible parallel simulation.

Every stochastic task derives its generator from (root seed, integer key
path) through splitmix64 folding, so results are independent of worker
count and scheduling order: task (seed, k1, k2, ...) always sees the same
stream.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "derive_rng"]

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into the root seed; stable across runs and workers."""
    state = _splitmix64(int(seed) & _MASK)
    for key in keys:
        state = _splitmix64(state ^ (int(key) & _MASK))
    return state


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by the derived stream id (counter-based)."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *keys)))
