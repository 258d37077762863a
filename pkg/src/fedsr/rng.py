"""Reproducible random streams: SplitMix64 seeding, xoshiro256++ generation.

Every random decision in a run is drawn from a stream derived from
``(master_seed, label)``, so results never depend on scheduling. Labels
follow the scheme ``client/{id}/round/{r}``, ``noise/{image_id}`` and
``partition``.

Draw accounting (each "draw" is one 64-bit output):

* ``uniform()``          1 draw
* ``randint(lo, hi)``    1 draw
* ``normal()``           2 draws (cosine branch of Box-Muller)
* ``normals(n)``         2 * ceil(n / 2) draws (both branches used)
* ``gamma(alpha)``       variable (rejection sampling)
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_TWO_POW_M53 = 2.0 ** -53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def fnv1a64(label: str) -> int:
    h = FNV_OFFSET
    for byte in label.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class RngStream:
    """xoshiro256++ generator with a few pinned derived distributions."""

    __slots__ = ("s",)

    def __init__(self, state):
        state = [int(v) & MASK64 for v in state]
        if len(state) != 4:
            raise ValueError("xoshiro256++ state needs four 64-bit words")
        if not any(state):
            raise ValueError("xoshiro256++ state must not be all zero")
        self.s = state

    def copy(self) -> "RngStream":
        return RngStream(self.s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def u64_array(self, n: int) -> np.ndarray:
        return np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Uniform double in ``[low, high)`` from the top 53 bits."""
        u = (self.next_u64() >> 11) * _TWO_POW_M53
        return low + (high - low) * u

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the closed range ``[low, high]``."""
        span = high - low + 1
        return low + min(int(self.uniform() * span), span - 1)

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals in float64, both Box-Muller branches used."""
        pairs = (n + 1) // 2
        raw = self.u64_array(2 * pairs) >> np.uint64(11)
        u = raw.astype(np.float64) * _TWO_POW_M53
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def gamma(self, alpha: float) -> float:
        """Gamma(alpha, 1) via Marsaglia-Tsang, with the U**(1/alpha) boost for alpha < 1."""
        if alpha <= 0:
            raise ValueError("gamma shape must be positive")
        if alpha < 1.0:
            g = self.gamma(alpha + 1.0)
            u = 1.0 - self.uniform()
            return g * u ** (1.0 / alpha)
        d = alpha - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.uniform()
            if u < 1.0 - 0.0331 * x ** 4:
                return d * v
            if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle into a new list (one draw per swap)."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(0, i)
            out[i], out[j] = out[j], out[i]
        return out


def derive_stream(master_seed: int, label: str) -> RngStream:
    """Stream seeded with four SplitMix64 outputs of ``master_seed ^ fnv1a(label)``."""
    state = (int(master_seed) & MASK64) ^ fnv1a64(label)
    words = []
    for _ in range(4):
        state, out = splitmix64(state)
        words.append(out)
    return RngStream(words)
