"""Deterministic seed derivation.

Child seeds come from SplitMix64: ``derive_seed(master, *keys)`` folds each
key into the state and applies the SplitMix64 finaliser.  Integer keys are
used directly; string keys are first reduced to 64 bits with CRC-32 of
their UTF-8 bytes, so namespaced streams (``"init"``, ``"shuffle"``, ...)
never collide with image indices in practice.
"""

from __future__ import annotations

import zlib

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys) -> int:
    state = splitmix64(int(master) & MASK64)
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8")) | (1 << 32)
        state = splitmix64(state ^ (int(key) & MASK64))
    return state
