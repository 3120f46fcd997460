"""Seedable pseudorandom streams with numbered, independent child streams.

Every stream is an xoshiro256++ generator whose state is derived from a
64-bit master seed plus a chain of child indices through splitmix64-style
mixing.  The same (seed, index path) therefore names the same stream on
every run, which is what makes all generators in this package reproducible.

The mixing and generation primitives are exposed both as a Python class
(:class:`RandomSource`) and as numba-jitted helpers, so that hot loops can
derive and advance identical streams without crossing into Python.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64, int64

__all__ = ["RandomSource"]

# Number of raw 64-bit words buffered per Python-level stream.
_BUF_LEN = 256

# Initial mixing constant applied to the master seed so that stream keys do
# not coincide with raw user seeds.
_SEED_DOMAIN = 0xD1B54A32D192ED03

_U64_MASK = (1 << 64) - 1
_DOUBLE_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _mix(a, b):
    """Combine two 64-bit words into one, splitmix64 finalizer style."""
    z = a ^ (b * uint64(0x9E3779B97F4A7C15))
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True)
def _state_from_base(base, out):
    """Expand a mixed 64-bit key into a full xoshiro256++ state."""
    acc = base
    nonzero = False
    for j in range(4):
        acc = acc + uint64(0x9E3779B97F4A7C15)
        w = _mix(acc, uint64(j) ^ base)
        out[j] = w
        if w != uint64(0):
            nonzero = True
    if not nonzero:  # the all-zero state is the one fixed point
        out[0] = uint64(1)


@njit(cache=True, inline="always")
def _derive_state(base, i0, i1, i2, out):
    """State for the child stream (i0, i1, i2) of a mixed base key."""
    b = _mix(base, uint64(i0))
    b = _mix(b, uint64(i1))
    b = _mix(b, uint64(i2))
    _state_from_base(b, out)


@njit(cache=True, inline="always")
def _next_u64(s):
    x = s[0] + s[3]
    r = ((x << uint64(23)) | (x >> uint64(41))) + s[0]
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << uint64(45)) | (s[3] >> uint64(19))
    return r


@njit(cache=True, inline="always")
def _next_double(s):
    """Uniform double in [0, 1) with 53 random bits."""
    return (_next_u64(s) >> uint64(11)) * _DOUBLE_UNIT


@njit(cache=True, inline="always")
def _next_below(s, n):
    """Uniform integer in [0, n); unbiased via threshold rejection."""
    nn = uint64(n)
    thresh = (uint64(0) - nn) % nn  # == 2**64 mod n
    while True:
        x = _next_u64(s)
        if x >= thresh:
            return int64(x % nn)


@njit(cache=True)
def _fill_words(s, out):
    for i in range(out.size):
        out[i] = _next_u64(s)


def mix_key(a: int, b: int) -> int:
    """Python-visible twin of the kernel key mixer."""
    return int(_mix(uint64(a & _U64_MASK), uint64(b & _U64_MASK)))


def base_from_seed(seed: int) -> int:
    """Mixed base key of the stream family rooted at ``seed``."""
    return mix_key(_SEED_DOMAIN, seed)


class RandomSource:
    """One xoshiro256++ stream plus derivation of numbered child streams.

    The same master seed always yields the same output sequence, and child
    streams with distinct index paths are independent by construction (their
    states come from separately mixed keys).  A single instance must never be
    shared between threads; move whole child streams instead.
    """

    __slots__ = ("_base", "_key", "_state", "_buf", "_pos")

    def __init__(self, seed: int, _key: tuple[int, ...] | None = None, _base: int | None = None):
        if _base is None:
            seed = int(seed)
            self._base = base_from_seed(seed)
            self._key = (seed,)
        else:
            self._base = _base
            self._key = _key or ()
        self._state = np.empty(4, dtype=np.uint64)
        _state_from_base(uint64(self._base), self._state)
        self._buf = np.empty(_BUF_LEN, dtype=np.uint64)
        self._pos = _BUF_LEN

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RandomSource(key={self._key})"

    def child(self, index: int) -> "RandomSource":
        """Independent numbered child stream; derivation ignores consumption."""
        if index < 0:
            raise ValueError("child index must be non-negative")
        return RandomSource(
            0, _key=self._key + (int(index),), _base=mix_key(self._base, index)
        )

    def kernel_state(self) -> np.ndarray:
        """Raw stream state for jitted kernels.

        Kernels advance the same underlying stream in place.  Interleaving
        kernel calls with Python-side draws is safe: buffered words are never
        regenerated, and call order is deterministic.
        """
        return self._state

    @property
    def base_key(self) -> int:
        """Mixed 64-bit key; kernels derive sub-streams from it."""
        return self._base

    def _next_word(self) -> int:
        if self._pos >= _BUF_LEN:
            _fill_words(self._state, self._buf)
            self._pos = 0
        w = int(self._buf[self._pos])
        self._pos += 1
        return w

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self._next_word() >> 11) * _DOUBLE_UNIT

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValueError("empty range")
        thresh = (1 << 64) % span
        while True:
            x = self._next_word()
            if x >= thresh:
                return low + (x % span)

    def bernoulli(self, p: float) -> bool:
        """True with probability ``p``."""
        return self.random() < p
