# brw/streams.py
from typing import Iterable

import numpy as np


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """
    Generator for the stream named by (seed, *key).

    Streams are addressed, not advanced: the same (seed, key) always gives the
    same draws whatever order or thread the work runs in.
    """
    if seed < 0 or any(k < 0 for k in key):
        raise ValueError(f"seed and stream key must be non-negative, got {seed}, {key}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)])))


def block_ranges(total: int, block_size: int) -> Iterable[tuple[int, int]]:
    """(start, stop) pairs covering range(total) in fixed-size blocks."""
    for start in range(0, total, block_size):
        yield start, min(total, start + block_size)
