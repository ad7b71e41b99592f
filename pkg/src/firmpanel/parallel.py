"""Order-preserving worker pool helpers."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def pmap(func: Callable[[T], R], items: Iterable[T], workers: int = 1, chunksize: int = 1) -> List[R]:
    """Map ``func`` over ``items`` in input order.

    ``func`` must be a picklable module-level callable when ``workers > 1``.
    Results are identical regardless of the worker count.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items, chunksize=chunksize))


def chunked(seq: Sequence[T], n_chunks: int) -> List[Sequence[T]]:
    """Split into at most ``n_chunks`` contiguous slices."""
    if not seq:
        return []
    n_chunks = max(1, min(n_chunks, len(seq)))
    step = -(-len(seq) // n_chunks)
    return [seq[i:i + step] for i in range(0, len(seq), step)]
