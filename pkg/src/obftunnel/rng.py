"""Seeded random streams.

Every consumer gets its own ``numpy.random.Generator`` derived from the master
seed plus a tuple of integer keys, so results never depend on the order in
which streams are drawn.
"""

from __future__ import annotations

import zlib

import numpy as np

# fixed small ints used as the first spawn key per consumer
STREAM_EXPANDER = 1
STREAM_MATCHING = 2
STREAM_ORACLE = 3
STREAM_TRIAL = 4
STREAM_INSTANCE = 5
STREAM_SHUFFLE = 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def name_key(name: str) -> int:
    """Stable integer key for a string (crc32, not ``hash``)."""
    return zlib.crc32(name.encode("utf-8"))


def ensure_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
