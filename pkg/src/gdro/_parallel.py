"""Deterministic slice-chunked parallelism for the per-node solver maps.

Each backward step is a pure elementwise map over spatial nodes reading an
immutable next slice, so splitting the index range across threads and
concatenating the chunk results is bitwise identical to a single-threaded
pass for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def resolve_threads(threads=None):
    """CLI --threads, else GDRO_THREADS, else 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("GDRO_THREADS", "").strip()
    return max(1, int(env)) if env else 1


class ChunkRunner:
    """Runs fn(lo, hi) -> tuple-of-arrays over [0, n) in contiguous chunks."""

    def __init__(self, n, threads=1):
        self.n = n
        self.threads = max(1, min(int(threads), n))
        self.pool = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None
        step = -(-n // self.threads)
        self.bounds = [(lo, min(lo + step, n)) for lo in range(0, n, step)]

    def run(self, fn):
        if self.pool is None:
            return fn(0, self.n)
        futures = [self.pool.submit(fn, lo, hi) for lo, hi in self.bounds]
        parts = [f.result() for f in futures]
        if isinstance(parts[0], tuple):
            return tuple(np.concatenate(cols) for cols in zip(*parts))
        return np.concatenate(parts)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
