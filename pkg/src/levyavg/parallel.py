"""Fork-based worker pool for embarrassingly parallel path work.

Work items are integer-indexed; the task closure is handed to workers
through fork inheritance (a module global set just before the pool
starts), so models with non-picklable coefficient callables still work.
Results come back in index order regardless of completion order, which
keeps downstream reductions byte-deterministic for any pool size.
"""

from __future__ import annotations

import multiprocessing
import os

_TASK = None


def _invoke(i):
    return _TASK(i)


def run_indexed(task, n: int, threads: int = 1):
    """Evaluate task(0..n-1), possibly on a fork pool; ordered results."""
    if threads is None or threads <= 1 or n <= 1:
        return [task(i) for i in range(n)]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        return [task(i) for i in range(n)]
    global _TASK
    _TASK = task
    try:
        with ctx.Pool(min(threads, n)) as pool:
            chunk = max(1, n // (4 * threads))
            return pool.map(_invoke, range(n), chunksize=chunk)
    finally:
        _TASK = None


def default_threads() -> int:
    env = os.environ.get("LEVYAVG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))
