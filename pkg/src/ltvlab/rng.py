"""Seeded random streams.

All randomness goes through Philox4x64-10, a counter-based generator
(Salmon et al., "Parallel random numbers: as easy as 1, 2, 3", SC 2011).
A stream is addressed by a tuple of non-negative integers, e.g.
``(seed, STREAM_DATASET, trajectory_index)``; the tuple is hashed into the
Philox key by ``numpy.random.SeedSequence``.  Two streams with distinct
tuples are statistically independent, so work can be split across threads
or processes without changing any result.
"""

from __future__ import annotations

import numpy as np

# stream tags keep unrelated consumers of one seed apart
STREAM_DATASET = 1
STREAM_SPLIT = 2
STREAM_LTV = 3
STREAM_MLP_INIT = 4
STREAM_MLP_BATCH = 5
STREAM_INIT_CONTROLS = 6
STREAM_MOMENTS = 7
STREAM_MISC = 8


def stream(*key: int) -> np.random.Generator:
    """Return an independent generator for the integer tuple ``key``."""
    if not key:
        raise ValueError("stream key must contain at least the seed")
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
