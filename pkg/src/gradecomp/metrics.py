"""Accuracy-matrix metrics.

``R[t, i]`` holds the test accuracy on task ``i`` measured after
finishing training step ``t`` (0-based); entries with ``i > t`` are
unused and stay NaN.
"""

from __future__ import annotations

import numpy as np


def _check_matrix(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] < 1:
        raise ValueError(f"expected a square accuracy matrix, got shape {R.shape}")
    T = R.shape[0]
    used = R[np.tril_indices(T)]
    if np.isnan(used).any():
        raise ValueError("lower triangle contains unfilled entries")
    if (used < 0.0).any() or (used > 1.0).any():
        raise ValueError("accuracies must lie in [0, 1]")
    return R


def acc(R) -> float:
    """Mean final-row accuracy over all tasks."""
    R = _check_matrix(R)
    return float(R[-1, :].mean())


def bwt(R) -> float | None:
    """Mean change of old-task accuracy between learning time and the end.

    Positive values mean later training helped earlier tasks.  Undefined
    for a single task, in which case ``None`` is returned rather than 0.
    """
    R = _check_matrix(R)
    T = R.shape[0]
    if T < 2:
        return None
    diag = np.diag(R)[: T - 1]
    return float((R[-1, : T - 1] - diag).mean())
