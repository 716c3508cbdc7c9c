"""Order-preserving map over items, serial or thread-pooled.

threads=1 is a plain loop and guarantees bitwise-reproducible runs; larger
pools still merge results in submission order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
