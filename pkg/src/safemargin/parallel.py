"""Deterministic chunked fan-out of pure per-point evaluations.

Work is always split into chunks of a fixed size, independent of the number
of workers, so results are bit-identical for every ``jobs`` setting.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

CHUNK = 64


def default_jobs():
    return os.cpu_count() or 1


def chunked_map(fn, items, jobs=1, chunk=CHUNK):
    """Apply ``fn(list) -> list`` to fixed-size chunks and concatenate."""
    items = list(items)
    chunks = [items[i:i + chunk] for i in range(0, len(items), chunk)]
    if not chunks:
        return []
    jobs = max(1, int(jobs or 1))
    if jobs == 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=min(jobs, len(chunks)), mp_context=ctx) as pool:
            parts = list(pool.map(fn, chunks))
    return [r for part in parts for r in part]
