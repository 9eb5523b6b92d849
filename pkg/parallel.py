"""
Deterministic chunked reductions over particle arrays

Work is split into chunks of a fixed size that does not depend on the number
of workers, and partial results are summed in chunk order. The result is
therefore bitwise identical for any worker count.
"""

import os
from typing import Callable, List

import numpy as np
from joblib import Parallel, delayed

WORKERS_ENV = 'PIC_REMAP_WORKERS'
DEFAULT_CHUNK = 1 << 16


def default_workers() -> int:
    """Worker count from the environment, 1 when unset or invalid"""
    value = os.environ.get(WORKERS_ENV, '').strip()
    if value.isdigit() and int(value) > 0:
        return int(value)
    return 1


def chunk_slices(n_items: int, chunk_size: int = DEFAULT_CHUNK) -> List[slice]:
    """Split range(n_items) into consecutive slices of chunk_size"""
    return [slice(start, min(start + chunk_size, n_items))
            for start in range(0, n_items, chunk_size)]


def accumulate(partial: Callable[[slice], np.ndarray], n_items: int, shape,
               workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """
    Sum partial arrays computed over particle chunks

    Args:
        partial: Function mapping a particle slice to an array of `shape`
        n_items: Number of particles
        shape: Shape of the accumulated array
        workers: Number of threads
        chunk_size: Particles per chunk (fixed, independent of workers)

    Returns:
        Accumulated array, merged in chunk order
    """
    total = np.zeros(shape)
    slices = chunk_slices(n_items, chunk_size)
    if not slices:
        return total

    if workers <= 1 or len(slices) == 1:
        for piece in slices:
            total += partial(piece)
        return total

    parallel = Parallel(n_jobs=workers, backend='threading', return_as='generator')
    for result in parallel(delayed(partial)(piece) for piece in slices):
        total += result
    return total


def map_chunks(func: Callable[[slice], np.ndarray], n_items: int,
               workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """Apply an elementwise map over chunks and concatenate in order"""
    slices = chunk_slices(n_items, chunk_size)
    if not slices:
        return func(slice(0, 0))
    if workers <= 1 or len(slices) == 1:
        return np.concatenate([func(piece) for piece in slices])
    parallel = Parallel(n_jobs=workers, backend='threading')
    return np.concatenate(parallel(delayed(func)(piece) for piece in slices))
