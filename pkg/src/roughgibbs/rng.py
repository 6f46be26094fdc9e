"""Reproducible random streams.

Every Monte Carlo routine in the package draws from an :class:`RngStream`.
A stream is identified by ``(seed, stream)`` and backed by numpy's
counter-based Philox generator, so work split over chunks gives the same
numbers no matter which worker runs which chunk.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "as_stream", "chunked", "parallel_map"]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream id) pair naming an independent random stream."""

    seed: int = 0
    stream: int = 0
    path: tuple = ()

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream <= _MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,) + self.path)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, i: int) -> "RngStream":
        """Deterministic sub-stream ``i``; children of distinct ids never overlap."""
        return RngStream(self.seed, self.stream, self.path + (int(i),))


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream()
    return RngStream(int(rng))


def chunked(n: int, size: int):
    """Split ``n`` items into ``(chunk_id, count)`` pieces of at most ``size``."""
    out = []
    k = 0
    while n > 0:
        m = min(size, n)
        out.append((k, m))
        n -= m
        k += 1
    return out


def parallel_map(fn, tasks, workers: int = 1):
    """Map ``fn`` over ``tasks`` keeping input order.

    Results depend only on the tasks, never on ``workers``.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))
