"""Order-preserving map over a process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(configured: int | None = None) -> int:
    env = os.environ.get("PREACQ_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, int(configured or 1))


def pmap(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, fanned out when ``workers > 1``; output order follows input."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))
