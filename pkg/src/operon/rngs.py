"""Deterministic counter-based RNG streams.

All randomness in a run flows from Philox generators keyed by (seed, stream).
Data samples use their global sample index as the stream id; bookkeeping
streams live in a reserved high range so they can never collide with samples.
"""

from __future__ import annotations

import numpy as np

STREAM_SPLIT = np.uint64(1) << np.uint64(62)
STREAM_TRAIN = (np.uint64(1) << np.uint64(62)) + np.uint64(1)


def stream_rng(seed: int, stream) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_rng(seed: int, sample_index: int) -> np.random.Generator:
    """Independent stream for one data sample; stable under parallelism."""
    return stream_rng(seed, sample_index)


def split_rng(seed: int) -> np.random.Generator:
    return stream_rng(seed, STREAM_SPLIT)


def train_rng(seed: int) -> np.random.Generator:
    return stream_rng(seed, STREAM_TRAIN)
