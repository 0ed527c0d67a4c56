"""Reproducible per-trajectory random streams and chunked parallel execution."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_CHUNK = 500


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) stream keyed by ``(master_seed, stream_index)``.

    Each trajectory owns one stream, so its random numbers do not depend on
    how trajectories are distributed over workers.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed & (2**64 - 1), spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(seq))


def trajectory_generators(master_seed: int, start: int, stop: int) -> list[np.random.Generator]:
    return [RngStream(master_seed, i).generator() for i in range(start, stop)]


def chunk_bounds(n: int, chunk_size: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    """Fixed partition of ``range(n)``; independent of the worker count."""
    return [(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]


def run_chunks(
    work: Callable[[int, int], T],
    n: int,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[T]:
    """Evaluate ``work(lo, hi)`` over the fixed chunks; results are in chunk order."""
    bounds = chunk_bounds(n, chunk_size)
    if threads <= 1 or len(bounds) == 1:
        return [work(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: work(*b), bounds))
