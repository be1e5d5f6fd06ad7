"""Deterministic pseudo-random streams.

Every random choice in this package (graph synthesis, mask splits, partition
tie-breaks, epoch schedules, weight init, dropout masks) flows from a single
root seed through named substreams, so identical inputs reproduce identical
results bit for bit, independent of numpy version or platform.

Generator: xoshiro256** with its four state words filled from splitmix64, the
combination recommended by the generators' reference implementations. All
arithmetic is plain Python integers masked to 64 bits.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(root: int, *path: int | str) -> int:
    """Map (root seed, substream path) to a new 64-bit seed.

    Path components may be ints or short strings; strings are folded bytewise.
    Used so that e.g. the weight-init stream and the schedule stream of one
    run never overlap.
    """
    s = root & _MASK64
    for part in path:
        if isinstance(part, str):
            part = int.from_bytes(part.encode("utf-8")[:24].ljust(8, b"\0"), "little") & _MASK64
        s, out = splitmix64(s ^ (part & _MASK64))
        s = out
    s, out = splitmix64(s)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream seeded via splitmix64."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        # all-zero state is invalid for xoshiro; splitmix64 output of four
        # consecutive draws is never all zero, but guard anyway
        if not any(s):
            s[0] = _GOLDEN
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct integers from [0, n), order randomized."""
        if k > n:
            raise ValueError(f"cannot sample {k} of {n}")
        items = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def normal(self) -> float:
        """Standard normal via Box-Muller (one value per pair of uniforms)."""
        u1 = self.random()
        u2 = self.random()
        if u1 <= 0.0:
            u1 = _INV_2_53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, count: int) -> np.ndarray:
        """Vector of standard normals, float64. Both Box-Muller branches of
        each uniform pair are used, so the stream advances 2*ceil(count/2)."""
        pairs = (count + 1) // 2
        u = np.empty(2 * pairs, dtype=np.float64)
        for i in range(2 * pairs):
            u[i] = self.random()
        u1 = np.maximum(u[0::2], _INV_2_53)
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]

    def uniforms(self, count: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        out = np.empty(count, dtype=np.float64)
        for i in range(count):
            out[i] = self.random()
        return lo + (hi - lo) * out

    def geometric_skip(self, p: float) -> int:
        """Gap to the next success of a Bernoulli(p) stream (0 = immediate).

        Lets sparse edge sampling visit only the successful pairs instead of
        every candidate pair. Requires 0 < p < 1.
        """
        r = self.random()
        return int(math.log1p(-r) / math.log1p(-p))
