"""SplitMix64 generator, pinned bit-exactly so seeded results are portable.

Every random decision in the package (augmentation shuffles, splits, weight
init, dropout masks, mini-batch order) is drawn from this generator.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 stream.

    ``next_array(n)`` returns exactly the values ``n`` calls to ``next()``
    would, computed vectorised with wrapping uint64 arithmetic.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def next_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits of each output."""
        return (self.next_array(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def below(self, bound: int) -> int:
        """``next() mod bound`` (the modulo bias is accepted and pinned)."""
        return self.next() % bound


def fisher_yates(items: list, rng: SplitMix64) -> list:
    """Shuffled copy of ``items``: for i = n-1..1 swap a[i], a[next() mod (i+1)]."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def permutation(n: int, rng: SplitMix64) -> list[int]:
    return fisher_yates(list(range(n)), rng)


def derive_seed(seed: int, *path: int) -> int:
    """Independent child seed for a (stream, index, ...) path under ``seed``."""
    s = int(seed) & MASK64
    for p in path:
        s = _mix(((s ^ ((int(p) * GOLDEN_GAMMA) & MASK64)) + GOLDEN_GAMMA) & MASK64)
    return s
