"""Portable seeded pseudo-random numbers.

Every source of randomness in this project (synthetic data placement, weight
initialization, minibatch sampling, augmentation draws) flows through
:class:`SplitMix64`, a 64-bit generator defined by a two-line recurrence.
Using a generator whose output is pinned by its recurrence, rather than a
library generator whose stream may change between releases, keeps seeded runs
reproducible across platforms and reimplementable in other languages.

Recurrence (all arithmetic mod 2**64), from the SplitMix64 mixer of
Steele, Lea & Flood's SplittableRandom:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Deterministic 64-bit generator; state is a single u64."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError("randint requires n >= 1")
        # Largest multiple of n that fits in 64 bits; reject above it.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def randints(self, n: int, count: int) -> list[int]:
        return [self.randint(n) for _ in range(count)]

    def next_u64_array(self, n: int) -> np.ndarray:
        """Next `n` outputs at once; bit-identical to `n` next_u64 calls.

        The state advances linearly (state_i = state_0 + i*GAMMA mod 2^64),
        so the whole batch vectorizes exactly. numpy uint64 arithmetic wraps
        mod 2^64, matching the scalar recurrence.
        """
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + idx * np.uint64(_GAMMA)
            z = (states ^ (states >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = int(states[-1]) if n > 0 else self.state
        return z

    def uniform_array(self, lo: float, hi: float, n: int) -> np.ndarray:
        """`n` uniforms in [lo, hi); same stream as repeated uniform()."""
        u = (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64)
        return lo + (hi - lo) * (u * (2.0 ** -53))


def derive_seed(seed: int, stream: str) -> int:
    """Derive an independent stream seed from a master seed and a label.

    Hashes the label bytes into the SplitMix64 state so that e.g. the batch
    sampling stream and the augmentation stream of one run never share a
    sequence (this is what makes identity-grid augmentation bit-identical to
    unaugmented training under the same master seed).
    """
    g = SplitMix64(seed)
    h = g.next_u64()
    for b in stream.encode("utf-8"):
        h = ((h ^ b) * _MIX1) & _MASK64
        h ^= h >> 29
    return h
