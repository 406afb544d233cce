"""Seed fan-out.

Every random stream in a run derives from one integer seed plus a tuple of
stream keys (names and counters), hashed through ``numpy.random.SeedSequence``.
Streams are independent of the order in which they are requested, so serial
and parallel runs draw the same numbers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def rng_for(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, *(_key(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
