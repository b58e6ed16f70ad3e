"""Worker pool shared by the cube scans and sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_WORKERS = "MAGRIESZ_WORKERS"


def worker_count(default: int | None = None) -> int:
    raw = os.environ.get(ENV_WORKERS)
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValueError(f"{ENV_WORKERS} must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ValueError(f"{ENV_WORKERS} must be positive")
        return n
    return default or min(4, os.cpu_count() or 1)


def pmap(func, items, workers: int | None = None) -> list:
    """Order-preserving map; runs inline when a single worker is configured."""
    items = list(items)
    n = worker_count() if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(func, items))
