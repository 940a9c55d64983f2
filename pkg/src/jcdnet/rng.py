"""Seeded xoshiro256** generator.

All randomness in the package (dropout masks, snippet sampling, batch
composition, synthetic data) flows through :class:`Xoshiro256`.  The stream
is fully specified so other implementations can reproduce it:

* seeding: the 64-bit seed feeds a SplitMix64 generator; its first four
  outputs become the state words ``s0..s3``.
* ``next_u64``: the reference xoshiro256** step (rotl(s1*5, 7)*9).
* ``random``: ``(u64 >> 11) * 2**-53``, one draw per float, in ``[0, 1)``.
* ``integers(bound)``: ``floor(random() * bound)``.
* ``normal``: Box-Muller on consecutive pairs ``(u1, u2)`` producing
  ``r*cos(2*pi*u2), r*sin(2*pi*u2)`` with ``r = sqrt(-2*log(1 - u1))``;
  an odd trailing value is dropped.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Return ``(new_state, output)`` for one SplitMix64 step."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _fill(state, n):
    out = np.empty(n, dtype=np.uint64)
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(n):
        out[i] = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
    return out


class Xoshiro256:
    """xoshiro256** with the derived draws documented in the module docstring."""

    def __init__(self, seed: int = 0):
        sm = int(seed) & _MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    @classmethod
    def from_state(cls, words) -> "Xoshiro256":
        rng = cls.__new__(cls)
        rng.state = np.array([int(w) & _MASK64 for w in words], dtype=np.uint64)
        if not rng.state.any():
            raise ValueError("xoshiro256** state must not be all zero")
        return rng

    def next_u64(self, n: int = 1) -> np.ndarray:
        return _fill(self.state, int(n))

    def random(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self.random(size)

    def integers(self, bound: int, size=None):
        """Uniform integers in ``[0, bound)``."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        u = self.random(size)
        if size is None:
            return int(u * bound)
        return np.floor(u * bound).astype(np.int64)

    def integer_range(self, low: int, high: int) -> int:
        """Uniform integer in the closed range ``[low, high]``."""
        return low + self.integers(high - low + 1)

    def normal(self, size, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return std * z.reshape(size)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the back."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def choice(self, items, k: int) -> list:
        """``k`` distinct items, in draw order."""
        if k > len(items):
            raise ValueError(f"cannot draw {k} items from {len(items)}")
        pool = list(items)
        picked = []
        for _ in range(k):
            j = self.integers(len(pool))
            picked.append(pool.pop(j))
        return picked
