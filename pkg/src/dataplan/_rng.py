"""Deterministic named RNG substreams derived from a single seed.

Every random draw in the library flows through :func:`substream`, keyed by a
stable path of labels and indices. Sibling streams are independent, so the
order in which workers consume them (or how many workers there are) never
changes any result.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return a generator for the stream identified by ``seed`` and ``keys``.

    String keys are folded through crc32 so the mapping is stable across
    processes and platforms; integer keys (e.g., a bootstrap index) are used
    directly. The same path always produces the same stream.
    """
    entropy = [int(seed) & _MASK64]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key) & _MASK64)
    return np.random.default_rng(np.random.SeedSequence(entropy))
