"""Seeded random streams and the process pool used by replica-level work."""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, Optional

import numpy as np

from mchmm.config import MAX_WORKERS

logger = logging.getLogger(__name__)


def replica_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Independent Philox stream for (seed, keys).

    The same seed and keys always give the same stream, regardless of which
    worker draws from it.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def derived_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed derived from (seed, keys)."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0]) >> 1


def worker_count(requested: Optional[int] = None) -> int:
    if requested is None:
        return MAX_WORKERS
    return max(1, int(requested))


def chunk_ranges(total: int, n_chunks: int) -> list[tuple[int, int]]:
    """Split range(total) into at most n_chunks contiguous pieces."""
    n_chunks = max(1, min(n_chunks, total))
    bounds = np.linspace(0, total, n_chunks + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_tasks(
    fn: Callable[[Any], Any],
    tasks: Iterable[Any],
    workers: Optional[int] = None,
) -> list[Any]:
    """Apply fn to each task, in order, on up to `workers` processes."""
    tasks = list(tasks)
    n = min(worker_count(workers), len(tasks))
    if n <= 1:
        return [fn(task) for task in tasks]
    logger.debug(f"Dispatching {len(tasks)} tasks to {n} worker processes")
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks))


def split_workers(total: int, parts: int) -> list[int]:
    """Share `total` workers among `parts` concurrent jobs, at least one each."""
    base, extra = divmod(max(total, parts), parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]
