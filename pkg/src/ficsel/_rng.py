"""Counter-based seeding for Monte Carlo loops.

Replicates are grouped into blocks of fixed size ``BLOCK``. Block ``b`` of
stream ``s`` under seed ``seed`` always draws from the generator seeded by
``SeedSequence(seed, spawn_key=(s, b))``, so results do not depend on the
number of worker threads or on scheduling order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

BLOCK = 8192

T = TypeVar("T")


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def run_blocks(
    fn: Callable[[np.random.Generator, int], T],
    reps: int,
    seed: int,
    *,
    stream: int = 0,
    threads: int = 1,
) -> list[T]:
    """Evaluate ``fn(rng, size)`` for every block and return results in block order."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    sizes = [min(BLOCK, reps - start) for start in range(0, reps, BLOCK)]

    def one(b: int) -> T:
        return fn(block_rng(seed, b, stream), sizes[b])

    if threads <= 1 or len(sizes) == 1:
        return [one(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(sizes))))


def mean_se(values: np.ndarray):
    """Sample mean and its Monte Carlo standard error along axis 0."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return mean, se


def sub_seed(seed: int, *keys: int) -> int:
    """A 63-bit seed derived from ``seed`` and integer keys."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
