"""Keyed, counter-free random streams.

Every (seed, stream id) pair maps to an independent SplitMix64 sequence. The
compiled core implements the same arithmetic, so both engines consume
bit-identical uniforms.
"""
from __future__ import annotations

import math
from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_TWO_M53 = 1.0 / 9007199254740992.0


class Purpose(IntEnum):
    THIN = 0
    ROUTE = 1
    INIT = 2
    PH_THIN = 3
    PH_ARRIVAL = 4
    CHECK = 5


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, *ids: int) -> int:
    """Derive the 64-bit starting state of the stream ``(seed, ids)``."""
    k = mix64(seed & MASK64)
    for x in ids:
        k = mix64(((k ^ (x & MASK64)) + GAMMA) & MASK64)
    return k


class RngStream:
    """One SplitMix64 stream identified by ``(seed, stream_id)``."""

    __slots__ = ("seed", "stream_id", "state")

    def __init__(self, seed: int, stream_id: tuple[int, ...]):
        self.seed = int(seed)
        self.stream_id = tuple(int(x) for x in stream_id)
        self.state = stream_key(self.seed, *self.stream_id)

    def uniform(self) -> float:
        """Next double in [0, 1) with 53 random bits."""
        self.state = (self.state + GAMMA) & MASK64
        return (mix64(self.state) >> 11) * _TWO_M53

    def exponential(self) -> float:
        """Unit-rate exponential draw by inversion."""
        return -math.log1p(-self.uniform())

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)])

    def numpy(self) -> np.random.Generator:
        """A numpy generator seeded from the same key, for vectorised work.

        Its output is unrelated to :meth:`uniform`; use one or the other.
        """
        return np.random.default_rng(
            np.random.SeedSequence(self.seed & MASK64, spawn_key=self.stream_id)
        )
