"""Deterministic 64-bit seed derivation.

All randomness in the package flows from a single master seed through the
helpers below.  The mixing is pure integer arithmetic (splitmix64 + FNV-1a),
so derived seeds are identical across platforms and interpreter versions --
in particular they do not depend on Python's per-process hash randomisation.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One splitmix64 round: maps a 64-bit int to a well-mixed 64-bit int."""
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK
    return (x ^ (x >> 31)) & _MASK


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def derive_seed(master: int, label: str) -> int:
    """Child seed for a named module/stream, stable across runs and platforms."""
    return splitmix64((master & _MASK) ^ _fnv1a(label.encode("utf-8")))


def combine(seed: int, index: int) -> int:
    """Mix a seed with an integer stream index into a fresh 64-bit key."""
    return splitmix64((seed & _MASK) ^ splitmix64(index & _MASK))


def generator(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based numpy generator keyed by ``seed`` and optional indices."""
    key = seed & _MASK
    for ix in indices:
        key = combine(key, ix)
    return np.random.Generator(np.random.Philox(key=key))
