"""Deterministic 64-bit seed derivation for named RNG streams.

Python's hash() is salted per process, so stream keys go through FNV-1a over
the utf-8 of "part|part|..." and a splitmix64 finisher mixed with the base
seed.  The same (base, parts) always yields the same stream on any machine,
and streams keyed by domain identity survive reordering of the domain list.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def stable_hash64(text: str) -> int:
    """FNV-1a over utf-8 bytes, 64-bit."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK
    return h


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(base: int, *parts) -> int:
    """Mix a base seed with a tuple of labels into one 64-bit seed."""
    key = "|".join(str(p) for p in parts)
    return _splitmix64((int(base) & _MASK) ^ stable_hash64(key))


def stream(base: int, *parts) -> np.random.Generator:
    """A named PCG64 stream, reproducible from (base, parts) alone."""
    return np.random.default_rng(derive_seed(base, *parts))
