"""Seed splitting and an order-preserving thread map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "INDIST_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def child_seed(seed: int, *index: int) -> np.random.SeedSequence:
    """Seed for stream ``index`` of master ``seed``; independent of evaluation order."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index))


def child_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *index))


def pmap(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally spread over a thread pool."""
    items = list(items)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
