"""Counter-based deterministic randomness.

Every stochastic choice in the toolkit (dataset generation, augmentation,
parameter init, batch shuffling, searches) is a pure function of a 64-bit
seed and a counter, so outputs reproduce bit-for-bit across platforms,
processes and (re)implementations.

The mixer is splitmix-style and is specified exactly so other languages can
replay it:

    mix64(x):  x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9   (mod 2^64)
               x ^= x >> 27;  x *= 0x94D049BB133111EB   (mod 2^64)
               x ^= x >> 31

    derive(seed, i1, i2, ...):
               s = mix64(seed + GOLDEN)                  (mod 2^64)
               for each index i:  s = mix64(s ^ ((i + 1) * GOLDEN))
    GOLDEN = 0x9E3779B97F4A7C15

A stream seeded with `s` produces its n-th raw word as
``mix64(s + n * GOLDEN)``; uniform doubles are ``(word >> 11) * 2**-53`` and
normals come from Box-Muller over consecutive pairs.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GOLDEN = np.uint64(GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)


def mix64(x: int) -> int:
    x &= MASK64
    x ^= x >> 30
    x = (x * _MIX1) & MASK64
    x ^= x >> 27
    x = (x * _MIX2) & MASK64
    x ^= x >> 31
    return x


def derive(seed: int, *indices: int) -> int:
    """Derive a child seed from a master seed and an index path."""
    state = mix64((seed + GOLDEN) & MASK64)
    for idx in indices:
        state = mix64((state ^ (((idx + 1) * GOLDEN) & MASK64)) & MASK64)
    return state


def _mix64_array(x: np.ndarray) -> np.ndarray:
    # numpy uint64 arithmetic wraps mod 2^64, matching the scalar path
    x = x ^ (x >> np.uint64(30))
    x = x * _U64_MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _U64_MIX2
    x = x ^ (x >> np.uint64(31))
    return x


class Rng:
    """Deterministic stream of words/floats/normals over a derived seed."""

    def __init__(self, seed: int):
        self._base = np.uint64(seed & MASK64)
        self._n = 0

    def u64(self) -> int:
        v = mix64((int(self._base) + self._n * GOLDEN) & MASK64)
        self._n += 1
        return v

    def u64_array(self, n: int) -> np.ndarray:
        counters = np.arange(self._n, self._n + n, dtype=np.uint64)
        self._n += n
        return _mix64_array(self._base + counters * _U64_GOLDEN)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.u64() >> 11) * 2.0**-53

    def random_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if not isinstance(shape, int) else shape
        out = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(shape)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Integer in [0, n) by rejection-free scaling (n << 2^53)."""
        if n < 1:
            raise ValueError("randint needs n >= 1")
        return int(self.random() * n)

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = ((self.u64() >> 11) + 1) * 2.0**-53  # (0, 1]
        u2 = (self.u64() >> 11) * 2.0**-53
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape, sigma: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        m = (n + 1) // 2
        w1 = self.u64_array(m)
        w2 = self.u64_array(m)
        u1 = ((w1 >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (w2 >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (sigma * z).reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list:
        items = list(range(n))
        self.shuffle(items)
        return items
