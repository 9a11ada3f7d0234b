"""Process-pool helper for per-truck partitions."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers() -> int:
    return os.cpu_count() or 1


def map_parts(fn, parts, workers):
    """Apply ``fn`` to each part, preserving order; serial when ``workers <= 1``."""
    parts = list(parts)
    if workers <= 1 or len(parts) <= 1:
        return [fn(p) for p in parts]
    with ProcessPoolExecutor(max_workers=min(workers, len(parts))) as pool:
        return list(pool.map(fn, parts))
