"""Counter-based splitmix64 random streams.

Every consumer derives its own stream from an integer key, so the i-th draw
depends only on (key, i) and never on global call order. That is what makes
scene generation, augmentation, and shuffling reproducible independently of
how much randomness other parts of the pipeline consumed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Stream:
    """Deterministic random stream; the i-th output is mix64(key + (i+1)*GAMMA)."""

    def __init__(self, key: int):
        self._key = np.uint64(key & MASK64)
        self._drawn = 0

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit values."""
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        self._drawn += n
        with np.errstate(over="ignore"):
            return mix64(self._key + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) with 53-bit resolution."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randint(self, lo: int, hi: int) -> int:
        """One integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + int(self.u64(1)[0] % np.uint64(span))

    def normal(self, n: int, std: float = 1.0) -> np.ndarray:
        """n standard normals (scaled by std) via Box-Muller on uniform pairs.

        Layout is concat(r*cos, r*sin) truncated to n, so requesting n and
        n+1 values yields the same first n numbers only when ceil(n/2) agrees;
        callers that care about prefix stability should draw fixed-size blocks.
        """
        if n == 0:
            return np.zeros(0)
        k = (n + 1) // 2
        u = self.uniform(2 * k)
        # log1p(-u) = log(1 - u); u < 1 strictly, so the log is finite
        r = np.sqrt(-2.0 * np.log1p(-u[:k]))
        ang = (2.0 * np.pi) * u[k:]
        out = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return out * std if std != 1.0 else out

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
