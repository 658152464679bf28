"""Conversion of user-facing randomness into counter-based streams."""

from __future__ import annotations

import numpy as np

from . import _core

_MASK = (1 << 64) - 1


def seed_key(seed: int) -> np.uint64:
    """Root key of the stream family for an integer seed."""
    # compiled functions hand uint64 results back as Python ints; keep the numpy type
    return np.uint64(_core.mix64(np.uint64(int(seed) & _MASK) + np.uint64(0x632BE59BD9B4E019)))


def child_key(key: np.uint64, *path: int) -> np.uint64:
    """Key of the sub-stream reached by following ``path`` from ``key``."""
    k = np.uint64(key)
    for p in path:
        k = np.uint64(_core.derive_key(k, np.uint64(int(p) & _MASK)))
    return k


def as_key(rng: np.random.Generator | int | np.uint64 | None) -> np.uint64:
    """Draw a fresh stream key from ``rng``.

    A ``numpy.random.Generator`` advances by one draw, so repeated calls with
    the same generator give independent streams.  An integer is a seed.
    """
    if rng is None:
        rng = np.random.default_rng()
    if isinstance(rng, np.random.Generator):
        return np.uint64(int(rng.integers(0, 1 << 63, dtype=np.int64)) * 2 + 1)
    return seed_key(int(rng))


def stream(rng: np.random.Generator | int | np.uint64 | None) -> np.ndarray:
    """A ``(key, counter)`` state array for the compiled kernels."""
    st = np.zeros(2, dtype=np.uint64)
    st[0] = as_key(rng)
    return st
