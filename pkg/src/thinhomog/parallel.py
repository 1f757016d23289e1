"""Order-preserving thread map for embarrassingly parallel loops.

Results are collected in submission order, so parallel runs are
bit-identical to sequential ones.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads: int) -> int:
    if threads <= 0:
        return os.cpu_count() or 1
    return threads


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    threads = min(resolve_threads(threads), len(items)) if items else 1
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
