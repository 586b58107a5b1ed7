"""Counter-based random streams with named splitting.

Every stochastic operation in the toolkit derives its generator from a
64-bit seed plus a path of stream labels, e.g. ``stream(seed, "rollout", i)``.
Streams with different paths are statistically independent Philox
counters, so batches of rollouts can be evaluated in any order (or in
parallel) without changing results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fold(parts: tuple) -> int:
    """FNV-1a hash of a path of ints/strings into one 64-bit word."""
    h = _FNV_OFFSET
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
        elif isinstance(part, (int, np.integer)):
            data = (int(part) & _MASK64).to_bytes(8, "little")
        else:
            raise TypeError(f"stream path parts must be int or str, got {type(part)!r}")
        # separator byte keeps ("ab","c") distinct from ("a","bc")
        for byte in data + b"\x1f":
            h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for (seed, *path): Philox keyed by the seed and the folded path."""
    key = np.array([int(seed) & _MASK64, fold(path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept either a raw seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(int(seed_or_rng))
