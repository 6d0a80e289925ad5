"""Stateless counter-based pseudorandom function.

Every random number in the package is a pure function of a tuple of
64-bit words (a seed, a purpose tag, lattice coordinates, a counter).
There is no generator state, so any draw can be replayed in isolation
and batches computed in any order or on any worker agree bit for bit.

The mixer is the SplitMix64 finalizer chained over the words.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["tag", "hash_words", "uniform", "derive_seed"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def tag(name: str) -> int:
    """Stable 64-bit word for a purpose label such as ``"env"``."""
    return zlib.crc32(name.encode()) | (len(name) << 32)


def _as_words(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind in "iub":
        return a.astype(np.int64).view(np.uint64) if a.ndim else np.int64(a).view(np.uint64)
    raise TypeError(f"PRF words must be integers, got {a.dtype}")


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_words(*words) -> np.ndarray:
    """Hash a sequence of (broadcastable) integer arrays to uint64."""
    with np.errstate(over="ignore"):
        h = np.asarray(_GOLDEN)
        for w in words:
            h = _mix((h ^ _as_words(w)) + _GOLDEN)
    return np.asarray(h, dtype=np.uint64)


def uniform(*words) -> np.ndarray:
    """Uniform double in [0, 1) with 53 random bits, keyed by ``words``."""
    return (hash_words(*words) >> _S11).astype(np.float64) * _INV53


def derive_seed(seed: int, purpose: str, index) -> np.ndarray:
    """Child seed(s) for ``index`` under ``purpose``; used for per-walk streams."""
    return hash_words(seed, tag(purpose), index)
