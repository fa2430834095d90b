"""Reproducible Brownian increments from counter-based Philox streams.

Every path owns a disjoint Philox counter block addressed by
``(seed, path_index, stream)``, so its increments do not depend on how many
paths are drawn, in which order, or on how many threads draw them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

PATH_STREAM = 0
NESTED_STREAM = 1
BLOCK_SIZE = 256


def substream(seed: int, *counter: int) -> np.random.Generator:
    """Generator for the counter block ``(seed; counter...)``.

    Up to three counter words are accepted; they fill the high words of the
    256-bit Philox counter, leaving the low word for the draws themselves.
    """
    if len(counter) > 3:
        raise ValueError("at most three counter words")
    words = [0] * (4 - len(counter)) + [int(c) for c in counter]
    words = [w & 0xFFFFFFFFFFFFFFFF for w in words]
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF, counter=words))


@dataclass(frozen=True)
class PathGrid:
    """One discretized Brownian path on a uniform grid of ``steps`` cells."""

    T: float
    steps: int
    increments: np.ndarray
    seed: int
    path_index: int

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def W(self) -> np.ndarray:
        """Path values at the grid points, shape ``(steps + 1, m)``, ``W[0] = 0``."""
        out = np.zeros((self.steps + 1, self.increments.shape[1]))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def path_increments(T: float, m: int, steps: int, seed: int, path_index: int) -> np.ndarray:
    gen = substream(seed, PATH_STREAM, path_index)
    return gen.standard_normal((steps, m)) * np.sqrt(T / steps)


def brownian_increments(T: float, m: int, steps: int, path_indices: Sequence[int], seed: int) -> np.ndarray:
    """Stack of increments, shape ``(len(path_indices), steps, m)``."""
    out = np.empty((len(path_indices), steps, m))
    for row, p in enumerate(path_indices):
        out[row] = path_increments(T, m, steps, seed, p)
    return out


def simulate_paths(T: float, m: int, steps: int, paths: int, seed: int) -> Iterator[PathGrid]:
    """Yield ``paths`` independent discretized Brownian paths."""
    if steps < 1 or paths < 1:
        raise ValueError("need steps >= 1 and paths >= 1")
    for p in range(paths):
        yield PathGrid(T, steps, path_increments(T, m, steps, seed, p), seed, p)


def map_path_blocks(func: Callable[[np.ndarray], np.ndarray], paths: int, threads: int = 1) -> np.ndarray:
    """Apply ``func(path_indices) -> per-path rows`` over fixed-size blocks and
    concatenate in path order.

    The block layout is independent of ``threads``; only scheduling changes, so
    results are bit-identical for any thread count.
    """
    blocks = [np.arange(lo, min(lo + BLOCK_SIZE, paths)) for lo in range(0, paths, BLOCK_SIZE)]
    if threads <= 1:
        parts = [func(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(func, blocks))
    return np.concatenate(parts, axis=0)
