"""Deterministic pseudo-random generator used for every seeded behaviour.

All reproducible randomness in the toolchain (path sampling, golden-vector
inputs, fixture weights, evaluation splits) goes through this generator so
identical seeds give identical bytes on every platform, Python version and
run. The algorithm is splitmix64; the name below is recorded in resolved
configuration output so other implementations can match the streams.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "splitmix64-v1"

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xA24BAED4963EE407


class SplitMix64:
    """64-bit splitmix sequence; one instance per logical stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        # top 53 bits -> [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = np.array([self.uniform() for _ in range(n)], dtype=np.float64)
        return (lo + u * (hi - lo)).astype(np.float32)

    def int8_array(self, n: int) -> np.ndarray:
        # low byte of each draw, mapped onto the full signed range
        vals = [(self.next_u64() & 0xFF) - 128 for _ in range(n)]
        return np.array(vals, dtype=np.int8)

    def shuffle(self, items: list) -> None:
        # Fisher-Yates with splitmix draws; in place
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def substream(seed: int, index: int) -> SplitMix64:
    """Derive an independent stream from (seed, index) deterministically."""
    base = SplitMix64(seed).next_u64() ^ ((index + 1) * _STREAM_SALT & _MASK64)
    return SplitMix64(base)
