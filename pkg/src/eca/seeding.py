"""Seed splitting.

A command takes one integer seed.  Each consumer of randomness gets its own
generator ``numpy.random.default_rng([seed, stream_id])`` (PCG64 seeded
through a SeedSequence), so adding a new consumer never shifts the random
numbers seen by an existing one.
"""

import numpy as np

STREAMS = {
    "init": 1,
    "shuffle": 2,
    "split": 3,
    "data": 4,
    "ecan_init": 5,
    "sample": 6,
    "responsibilities": 7,
    "kernel_init": 8,
    "subsample": 9,
}


def derive_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Generator for ``stream``; ``index`` separates repeated uses (e.g. restarts)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, STREAMS[stream]]
    if index:
        key.append(int(index))
    return np.random.default_rng(key)
