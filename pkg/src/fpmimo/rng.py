"""Counter-based random streams for reproducible parallel simulation.

Every Monte-Carlo trial gets its own Philox generator keyed by the master
seed plus a packed (context, point, trial) path, so results are independent
of batching, chunking, and worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]

_TRIAL_BITS = 36
_POINT_BITS = 16
_CONTEXT_BITS = 12


def substream(seed: int, context: int = 0, point: int = 0, trial: int = 0) -> np.random.Generator:
    """Generator for one (context, point, trial) cell under a master seed."""
    if not 0 <= trial < 2 ** _TRIAL_BITS:
        raise ValueError(f"trial index out of range: {trial}")
    if not 0 <= point < 2 ** _POINT_BITS:
        raise ValueError(f"point index out of range: {point}")
    if not 0 <= context < 2 ** _CONTEXT_BITS:
        raise ValueError(f"context index out of range: {context}")
    path = (context << (_POINT_BITS + _TRIAL_BITS)) | (point << _TRIAL_BITS) | trial
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(path)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_pairs(rng: np.random.Generator, shape) -> tuple[np.ndarray, np.ndarray]:
    """Two independent standard-normal arrays via the Box-Muller transform."""
    u1 = 1.0 - rng.random(shape)  # in (0, 1], keeps the log finite
    u2 = rng.random(shape)
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return r * np.cos(ang), r * np.sin(ang)
