"""Row-band parallelism with results merged in a fixed order."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "SPHSYNTH_NUM_THREADS"


def num_threads(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, threads)


def row_bands(n_rows: int, threads: int) -> list[slice]:
    """Split ``range(n_rows)`` into at most ``threads`` contiguous bands."""
    n = max(1, min(threads, n_rows))
    edges = [round(i * n_rows / n) for i in range(n + 1)]
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_bands(fn, n_rows: int, threads: int | None = None) -> list:
    """Apply ``fn(band)`` to each row band; results are returned in band order."""
    threads = num_threads(threads)
    bands = row_bands(n_rows, threads)
    if len(bands) == 1:
        return [fn(bands[0])]
    with ThreadPoolExecutor(max_workers=len(bands)) as pool:
        return list(pool.map(fn, bands))
