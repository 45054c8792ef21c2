"""Deterministic random streams and the worker pool for Monte Carlo loops.

Every draw, replicate or bootstrap sample gets its own generator seeded from
``(seed, *keys)``, so results do not depend on the order or the number of
workers that process them.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from a master seed and integer keys."""
    state = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    )


def parallel_map(
    func: Callable[[T], R], items: Iterable[T], threads: int = 1
) -> List[R]:
    """Apply ``func`` to every item, preserving input order.

    Args:
        func: Function to apply
        items: Inputs
        threads: Worker threads; 1 runs serially in the calling thread

    Returns:
        Results in input order
    """
    if threads <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
