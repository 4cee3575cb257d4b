"""Deterministic seed derivation.

All randomized procedures in this package draw from ``numpy.random.Generator``
instances seeded through :func:`mix`, a SplitMix64 fold over a root seed and a
tuple of integer stream tags.  Deriving every stream independently from
``(master_seed, tags...)`` keeps runs reproducible bit for bit and makes the
result independent of the order in which trials or queries are processed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for a 64-bit state."""
    x = (x + _GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix(seed: int, *streams: int) -> int:
    """Fold ``streams`` into ``seed``, returning a 64-bit sub-seed.

    ``mix(s)`` whitens a bare seed; ``mix(s, a, b)`` derives a stream that is
    stable under adding unrelated streams elsewhere.  Negative inputs are
    reduced modulo 2**64.
    """
    state = splitmix64(seed & _MASK64)
    for tag in streams:
        state = splitmix64(state ^ (tag & _MASK64))
    return state


def generator(seed: int, *streams: int) -> np.random.Generator:
    """A ``numpy`` generator for the derived stream ``mix(seed, *streams)``."""
    return np.random.default_rng(mix(seed, *streams))
