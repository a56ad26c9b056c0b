from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

# Below this many items the pool start-up costs more than it saves.
_MIN_PARALLEL = 2000


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _apply_chunk(fn: Callable[[T], R], chunk: Sequence[T]) -> List[R]:
    return [fn(x) for x in chunk]


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: Optional[int] = 1) -> List[R]:
    """Order-preserving map; ``fn`` must be picklable when ``jobs > 1``."""
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(items) < _MIN_PARALLEL:
        return [fn(x) for x in items]
    size = -(-len(items) // (jobs * 4))
    chunks = [items[i : i + size] for i in range(0, len(items), size)]
    out: List[R] = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(_apply_chunk, [fn] * len(chunks), chunks):
            out.extend(part)
    return out
