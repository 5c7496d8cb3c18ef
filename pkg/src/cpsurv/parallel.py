"""Deterministic seed splitting and an order-preserving parallel map.

Every replicate gets its own child ``SeedSequence`` derived from the master
seed, so results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import numpy as np


def spawn(rng, k: int) -> list:
    """``k`` independent child seed sequences of ``rng``.

    ``rng`` may be an int, a ``SeedSequence``, a ``Generator`` (consumed
    deterministically) or None (fresh entropy).
    """
    if isinstance(rng, np.random.SeedSequence):
        ss = rng
    elif isinstance(rng, np.random.Generator):
        ss = np.random.SeedSequence(rng.integers(0, 2**63, size=4).tolist())
    else:
        ss = np.random.SeedSequence(rng)
    return ss.spawn(k)


def pmap(fn, tasks, n_jobs: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally spread over worker processes."""
    tasks = list(tasks)
    if n_jobs is None or n_jobs == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    from joblib import Parallel, delayed, parallel_config

    with parallel_config(backend="loky", inner_max_num_threads=1):
        return Parallel(n_jobs=n_jobs, batch_size="auto")(delayed(fn)(t) for t in tasks)
