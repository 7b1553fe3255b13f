"""Seed splitting.

Child seeds are a pure function of the parent seed and an index path, so
independent pieces of work (knockoff realizations, replications, columns)
can run in any order or in parallel and still reproduce bit for bit.
"""
import numpy as np


def child_seed(seed: int, *path: int) -> int:
    """64-bit seed for the stream addressed by ``path`` under ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(p) for p in path)])
    return int(ss.generate_state(1, np.uint64)[0])
