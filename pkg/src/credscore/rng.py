"""Seeded, platform-stable random streams.

Every random draw in the package goes through :class:`Rng`. The bit stream is
PCG64 (PCG XSL-RR 128/64) seeded through NumPy's ``SeedSequence`` hashing, whose
output is fixed across platforms and NumPy releases. Floats and normals are
derived from the raw 64-bit words here rather than through NumPy's
distribution samplers, which do not carry the same stability guarantee.
"""

from __future__ import annotations

import math

import numpy as np

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and integer keys (e.g. an image index)."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0])


class Rng:
    """PCG64 stream seeded from ``(seed, *keys)``.

    Not safe to share between threads; derive one per image instead.
    """

    def __init__(self, seed: int, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self._bits = np.random.PCG64(np.random.SeedSequence([self.seed, *self.keys]))

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, n: int = None):
        """Doubles in [0, 1) from the top 53 bits of each word."""
        size = 1 if n is None else n
        out = (self.raw(size) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return float(out[0]) if n is None else out

    def below(self, high: int) -> int:
        """Integer in ``[0, high)``; bias is at most ``high / 2**53``."""
        if high <= 0:
            raise ValueError("high must be positive")
        return min(int(self.uniform() * high), high - 1)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal deviates by the Box-Muller transform, both branches used."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(_TWO_PI * u2)
        z[1::2] = r * np.sin(_TWO_PI * u2)
        return z[:n]
