"""SplitMix64 generator and helpers built on it.

Everything that must be reproducible across platforms and languages
(partition shuffles, weight init, batch order, secure-aggregation masks)
draws from this generator instead of numpy's bit generators.
"""
from __future__ import annotations

import hashlib
from typing import MutableSequence

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_i64(self) -> int:
        """Next output reinterpreted as a two's-complement signed integer."""
        v = self.next_u64()
        return v - (1 << 64) if v >> 63 else v

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_float()

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % bound


def derive_seed(*parts: object) -> int:
    """Hash an arbitrary tuple of labels into a 64-bit seed.

    Parts are joined with '|' after str(); the first 8 bytes of the SHA-256
    digest are read big-endian.
    """
    text = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


def fisher_yates(items: MutableSequence, rng: SplitMix64) -> MutableSequence:
    """In-place Durstenfeld shuffle; returns ``items`` for chaining."""
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def permutation(n: int, seed: int) -> list[int]:
    return fisher_yates(list(range(n)), SplitMix64(seed))
