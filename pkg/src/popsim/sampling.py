"""Randomness sources: fair coins, geometric random variables, and maxima of GRV batches.

All protocol randomness flows through a coin interface so that protocol logic
is a pure function of its inputs plus an explicit bit stream.  Two concrete
sources exist:

* ``SeededStream`` -- a xoshiro256** generator (period 2^256 - 1) implemented
  with plain Python integers so the bit sequence is identical on every
  platform for a given seed.
* ``ScriptedCoin`` -- a finite, caller-supplied bit sequence for tests.

A geometric random variable (GRV) here counts coin flips up to and including
the first tails: 1 + the number of leading heads, i.e. Geom(1/2) on {1,2,...}.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Iterable

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class CoinExhausted(Exception):
    """Raised when a scripted coin runs out of bits mid-sample."""


def splitmix64_mix(x: int) -> int:
    """One splitmix64 step: advance by the golden-ratio increment and finalize."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def seed_state(seed: int) -> list[int]:
    """Expand a 64-bit seed into the four xoshiro256** state words via splitmix64."""
    sm = seed & _MASK64
    words = []
    for _ in range(4):
        out = splitmix64_mix(sm)
        sm = (sm + _GOLDEN) & _MASK64
        words.append(out)
    if not any(words):  # degenerate all-zero state is invalid for xoshiro
        words[0] = _GOLDEN
    return words


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """Per-run seed for (master seed, run index), independent of execution order."""
    return splitmix64_mix((master_seed + (run_index + 1) * _GOLDEN) & _MASK64)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class CoinSource(ABC):
    """Provider of independent fair bits; True means heads."""

    @abstractmethod
    def flip(self) -> bool:
        """Return the next fair coin flip."""


class SeededStream(CoinSource):
    """xoshiro256**-backed randomness stream.

    Besides fair coin flips (the low bit of each 64-bit output) it offers
    exact bounded integers for the interaction scheduler.  The same word
    sequence is consumed by the compiled simulation kernels, so a pure-Python
    replay and a kernel run driven by equal states see identical randomness.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._s = seed_state(seed)

    @classmethod
    def for_run(cls, master_seed: int, run_index: int) -> "SeededStream":
        return cls(derive_run_seed(master_seed, run_index))

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

    def flip(self) -> bool:
        return bool(self.next_u64() & 1)

    def randbelow(self, m: int) -> int:
        """Uniform integer in [0, m) via rejection sampling (exactly uniform)."""
        if m <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - m) % m  # == 2**64 mod m
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % m

    def export_state(self):
        """Current state as a uint64 array consumable by the compiled kernels."""
        import numpy as np

        return np.array(self._s, dtype=np.uint64)

    def import_state(self, state) -> None:
        """Adopt a state array previously advanced by a kernel."""
        self._s = [int(w) for w in state]


class ScriptedCoin(CoinSource):
    """Fixed finite bit sequence; raises CoinExhausted when empty."""

    def __init__(self, bits: Iterable[int | bool]):
        self._bits = [bool(b) for b in bits]
        self._pos = 0

    def flip(self) -> bool:
        if self._pos >= len(self._bits):
            raise CoinExhausted("coin exhausted")
        bit = self._bits[self._pos]
        self._pos += 1
        return bit

    @property
    def remaining(self) -> int:
        return len(self._bits) - self._pos


def bits_for_grvs(values: Iterable[int]) -> list[int]:
    """Encode geometric values as a flip script: v heads-runs end in one tails each."""
    bits: list[int] = []
    for v in values:
        if v < 1:
            raise ValueError("geometric values are >= 1")
        bits.extend([1] * (v - 1))
        bits.append(0)
    return bits


def geometric_sample(coin: CoinSource) -> int:
    """Draw one Geom(1/2) value: 1 + number of heads before the first tails."""
    grv = 1
    while coin.flip():
        grv += 1
    return grv


def grv_max(k: int, coin: CoinSource) -> int:
    """Maximum of k independent geometric samples, consuming all k draws."""
    if k < 1:
        raise ValueError("k must be positive")
    best = 1
    for _ in range(k):
        g = geometric_sample(coin)
        if g > best:
            best = g
    return best
