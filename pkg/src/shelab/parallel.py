"""Thread pool for replica batches.

Compiled kernels release the GIL, so batches run concurrently in threads.
Batches are keyed by replica index and results are returned in submission
order, which keeps every estimate independent of the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")

_threads = 1


def set_threads(n: int | None) -> None:
    """Set the number of worker threads; ``None`` or 0 uses every available core."""
    global _threads
    if n is None or n == 0:
        n = os.cpu_count() or 1
    if n < 0:
        raise ValueError("thread count must be non-negative")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def map_batches(fn: Callable[..., T], items: Iterable) -> list[T]:
    """``[fn(item) for item in items]``, evaluated on the worker threads."""
    items = list(items)
    if _threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(_threads, len(items))) as pool:
        return list(pool.map(fn, items))
