"""Portable deterministic PRNG used wherever seeded reproducibility is promised.

The generator is splitmix64 (Steele, Lea & Flood 2014): a 64-bit counter
advanced by the golden-gamma constant and finalized with two xor-shift
multiplies.  Bounded draws use rejection sampling, subset selection uses a
partial Fisher-Yates shuffle, and Poisson draws use Knuth's product method.
All of these are fully specified, so the same seed produces the same stream
on any platform or language.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1


class Rng:
    """splitmix64 stream with bounded/uniform/Poisson helpers."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), bias-free via rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def poisson(self, lam: float) -> int:
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if lam == 0:
            return 0
        threshold = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.uniform()
            if p <= threshold:
                return k
            k += 1

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def sample_indices(self, population: int, n: int) -> list[int]:
        """First n positions of a partial Fisher-Yates shuffle of range(population)."""
        if n > population:
            raise ValueError("sample larger than population")
        idx = list(range(population))
        for i in range(n):
            j = i + self.below(population - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:n]

    def sample(self, seq, n: int) -> list:
        return [seq[i] for i in self.sample_indices(len(seq), n)]
