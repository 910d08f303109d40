"""SplitMix64, the only random source used by scene generation and corruption.

Algorithm (all arithmetic mod 2**64)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Derived draws:

* ``uniform()``    = (next() >> 11) * 2**-53, in [0, 1)
* ``randint(a, b)``= a + (next() mod n) for n = b - a + 1, rejecting draws
  >= 2**64 - (2**64 mod n) so the result is unbiased
* ``noise_field``  = the next ``size`` outputs computed in bulk (SplitMix64 is
  counter based, output i is mix(state + (i + 1) * GAMMA))
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], both ends inclusive."""
        n = hi - lo + 1
        if n <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % n

    def fork(self) -> "SplitMix64":
        """Independent child stream seeded from the next output."""
        return SplitMix64(self.next_u64())

    def noise_field(self, shape: tuple[int, ...]) -> np.ndarray:
        """Next prod(shape) raw outputs as a uint64 array (advances the stream)."""
        size = int(np.prod(shape))
        i = np.arange(1, size + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + i * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + size * GAMMA) & MASK64
        return z.reshape(shape)
