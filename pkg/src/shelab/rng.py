"""Deterministic random streams.

Every random quantity is drawn from a generator keyed by the master seed and
a tuple of integers (stream family, replica, block).  Results therefore do not
depend on batching, scheduling or the number of threads.
"""

from __future__ import annotations

import numpy as np

# stream families
LATTICE = 0
BM_LOCAL_TIME = 1
BM_EXPONENT = 2
DIFFUSION = 3
CENTERED = 4
SINGULAR = 5
VERIFY = 6
GIRSANOV = 7
ADVECTION_PROBE = 8


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for ``(seed, *key)``.

    Parameters
    ----------
    seed : int
        Master seed, any non-negative 64-bit integer.
    *key : int
        Non-negative integers naming the sub-stream.
    """
    if seed < 0 or any(k < 0 for k in key):
        raise ValueError("seed and stream keys must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.SFC64(ss))


def replica_normals(seed: int, family: int, replicas: range, shape: tuple[int, ...]) -> np.ndarray:
    """Stack standard normals drawn from one stream per replica.

    Returns an array of shape ``(len(replicas),) + shape`` whose row ``r`` is
    the first ``prod(shape)`` draws of stream ``(seed, family, replica)``.
    """
    out = np.empty((len(replicas),) + tuple(shape))
    for row, rep in enumerate(replicas):
        out[row] = stream(seed, family, rep).standard_normal(shape)
    return out
