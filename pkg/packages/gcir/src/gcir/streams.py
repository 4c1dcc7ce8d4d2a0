"""Counter-based normal streams.

The normal used by path p at step k is a pure function of (seed, p, k): paths are
grouped into fixed blocks of BLOCK_SIZE, and every (block, step) pair owns a Philox
counter window. A block always draws BLOCK_SIZE values, so neither the number of
paths nor the number of workers changes any individual draw.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

BLOCK_SIZE = 4096
MAX_SEED = 2**64 - 1

T = TypeVar("T")


def block_normals(seed: int, block: int, step: int, lane: int = 0) -> np.ndarray:
    """BLOCK_SIZE standard normals for (seed, block, step); `lane` separates side streams.

    Philox advances counter word 0 as it draws, so the words that name the stream
    (step, block, lane) sit in words 1-3.
    """
    bitgen = np.random.Philox(key=seed, counter=[0, step, block, lane])
    return np.random.Generator(bitgen).standard_normal(BLOCK_SIZE)


def blocks_for(n_paths: int) -> List[Tuple[int, int, int]]:
    """(block index, first path, path count) covering n_paths."""
    out = []
    for block, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        out.append((block, start, min(BLOCK_SIZE, n_paths - start)))
    return out


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.getenv("GCIR_THREADS", "1") or 1)
    return max(1, threads)


def map_blocks(fn: Callable[[Tuple[int, int, int]], T], blocks: Sequence[Tuple[int, int, int]], threads: Optional[int] = None) -> List[T]:
    """Run `fn` per block; results come back in block order whatever the worker count."""
    workers = min(resolve_threads(threads), max(1, len(blocks)))
    if workers == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))
