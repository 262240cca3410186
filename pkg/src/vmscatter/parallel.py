"""Deterministic chunked execution.

Work is split into chunks whose boundaries depend only on the problem
size, never on the worker count, and results are merged in chunk order.
Combined with per-item independence this makes outputs bitwise
identical for any number of threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 2048
_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def chunks(n, size=CHUNK):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def map_chunks(func, n, size=CHUNK, threads=None):
    """Apply ``func(a, b)`` to fixed chunks of ``range(n)``; results in order."""
    parts = chunks(n, size)
    threads = _threads if threads is None else threads
    threads = max(1, min(threads, len(parts), os.cpu_count() or 1))
    if threads == 1 or len(parts) <= 1:
        return [func(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda ab: func(*ab), parts))
