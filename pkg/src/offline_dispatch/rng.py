"""Portable deterministic random numbers (splitmix64).

Everything random in this package (instance generation, dataset noise,
parameter init, dropout, batch sampling) draws from this generator so that
a seed reproduces bit-identical results across platforms and runs. numpy's
bit generators would also do, but pinning our own ~20-line mixer keeps the
stream independent of numpy version.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SHIFT30 = np.uint64(30)
_SHIFT27 = np.uint64(27)
_SHIFT31 = np.uint64(31)
_SHIFT11 = np.uint64(11)
# 2^-53, for converting the top 53 bits to a float in [0, 1)
_FLOAT_SCALE = 1.1102230246251565e-16


def _mix(z):
    z = (z ^ (z >> _SHIFT30)) * _MIX1
    z = (z ^ (z >> _SHIFT27)) * _MIX2
    return z ^ (z >> _SHIFT31)


class SplitMix64:
    """Counter-based splitmix64 stream.

    Sequential and vectorized draws produce the same stream: drawing n
    values at once equals n scalar draws.
    """

    def __init__(self, seed: int):
        self._state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def next_u64(self) -> int:
        with np.errstate(over="ignore"):
            self._state = self._state + _GAMMA
            return int(_mix(self._state))

    def next_u64_array(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            counters = self._state + np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
            self._state = self._state + np.uint64(n) * _GAMMA
            return _mix(counters)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _FLOAT_SCALE

    def random_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        bits = self.next_u64_array(n) >> _SHIFT11
        return (bits.astype(np.float64) * _FLOAT_SCALE).reshape(shape)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        span = hi - lo + 1
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % span

    def randint_array(self, lo: int, hi: int, n: int) -> np.ndarray:
        span = hi - lo + 1
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        draws = self.next_u64_array(n) % np.uint64(span)
        return (draws.astype(np.int64) + lo)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def choice(self, items):
        return items[self.randint(0, len(items) - 1)]

    def spawn(self) -> "SplitMix64":
        """Independent child stream seeded from this one."""
        return SplitMix64(self.next_u64())
