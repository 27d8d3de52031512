"""Deterministic random number generation.

The generator is a bank of xoshiro256** streams whose states are seeded
from the master seed through a splitmix64 chain (the seeding procedure
recommended by the xoshiro authors). Lanes are stepped together with
vectorized uint64 arithmetic and their outputs interleaved lane-major
into one buffered stream, so a given seed always yields the same sample
sequence regardless of how draws are batched.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "splitmix64-seeded xoshiro256** (lane-interleaved)"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_LANES = 1024


def _splitmix64(counters: np.ndarray) -> np.ndarray:
    z = counters * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class RngState:
    """Seeded deterministic sample stream.

    Identical seeds produce identical streams; `derive` spawns an
    independent child stream from a string tag.
    """

    def __init__(self, seed: int, lanes: int = _LANES):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.algorithm = ALGORITHM
        counters = np.arange(1, 4 * lanes + 1, dtype=np.uint64) + np.uint64(self.seed)
        s = _splitmix64(counters).reshape(4, lanes)
        self._s0, self._s1, self._s2, self._s3 = s[0], s[1], s[2], s[3]
        self._buffer = np.empty(0, dtype=np.uint64)

    def _step(self) -> np.ndarray:
        out = _rotl(self._s1 * np.uint64(5), 7) * np.uint64(9)
        t = self._s1 << np.uint64(17)
        self._s2 ^= self._s0
        self._s3 ^= self._s1
        self._s1 ^= self._s2
        self._s0 ^= self._s3
        self._s2 ^= t
        self._s3 = _rotl(self._s3, 45)
        return out

    def _raw(self, n: int) -> np.ndarray:
        chunks = [self._buffer]
        have = len(self._buffer)
        while have < n:
            block = self._step()
            chunks.append(block)
            have += len(block)
        flat = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        self._buffer = flat[n:]
        return flat[:n]

    def uniform(self, shape=()) -> np.ndarray:
        """float32 samples in [0, 1), from the top 53 bits of each draw."""
        n = int(np.prod(shape)) if shape != () else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = u.astype(np.float32).reshape(shape)
        return out

    def uniform_signed(self, shape, scale: float) -> np.ndarray:
        """float32 samples uniform in [-scale, +scale)."""
        u = self.uniform(shape).astype(np.float64)
        return ((2.0 * u - 1.0) * scale).astype(np.float32)

    def normal(self, shape=()) -> np.ndarray:
        """float32 standard normal samples via Box-Muller (no rejection)."""
        n = int(np.prod(shape)) if shape != () else 1
        m = n + (n & 1)
        raw = self._raw(m)
        # map to (0, 1] so log() is finite
        u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u1, u2 = u[: m // 2], u[m // 2 :]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].astype(np.float32).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")

    def derive(self, tag: str) -> "RngState":
        """Independent child stream keyed by (seed, tag)."""
        mask = 0xFFFFFFFFFFFFFFFF
        h = self.seed
        for b in tag.encode("utf-8") + b"\x01":
            h = (h + b + 0x9E3779B97F4A7C15) & mask
            h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & mask
            h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & mask
            h ^= h >> 31
        return RngState(h)
