"""Process-pool helper with a scheduling-independent results contract.

Workers are forked so numba-compiled kernels are inherited, tasks are
dispatched in a fixed order, and each task derives its own random substream,
so outputs are identical for any worker count (including none).
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor


def default_threads() -> int:
    return os.cpu_count() or 1


def run_tasks(fn, tasks, threads: int | None):
    """Map fn over tasks, preserving order; threads=None or 1 runs inline."""
    tasks = list(tasks)
    if threads is None:
        threads = 1
    workers = max(1, min(threads, len(tasks)))
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, tasks))
