"""
Seeded random streams.

Every Monte-Carlo estimator derives one independent generator per work item
(grid index, path block, repeat) from ``(seed, index)``. Work items can then
run in any order, or on any number of threads, and produce identical output.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

from config import settings

T = TypeVar("T")

# Sampler paths are grouped into fixed blocks, one stream per block.
PATH_BLOCK = 1024


def stream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for work item ``index`` under ``seed``."""
    if seed is None:
        raise ValueError("A seed is required for stochastic estimators")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(i) for i in index]]))


def derive_seed(seed: int, *index: int) -> int:
    """Child seed (a plain int) for nested calls that take a seed, not a generator."""
    state = np.random.SeedSequence([int(seed), *[int(i) for i in index]]).generate_state(1)
    return int(state[0])


def path_blocks(n_paths: int, block: int = PATH_BLOCK) -> List[slice]:
    """Fixed partition of ``n_paths`` rows into blocks of ``block`` rows."""
    return [slice(start, min(start + block, n_paths)) for start in range(0, n_paths, block)]


def map_indexed(fn: Callable[[int], T], n: int, workers: Optional[int] = None) -> List[T]:
    """Evaluate ``fn(0..n-1)``, optionally on a thread pool; results in index order."""
    workers = settings.workers if workers is None else workers
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))
