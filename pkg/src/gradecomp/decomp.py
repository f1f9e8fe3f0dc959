"""Decompose replay-memory gradients into a shared component and
per-memory specific components.

The shared component is the plain mean of the old-task gradients; each
specific component is that task's deviation from the mean.  By
construction the specific columns sum to the zero vector, which caps the
numerical rank of the specific matrix at ``t - 2`` for ``t - 1`` stored
memories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg


def _check_same_dim(vectors: list[np.ndarray]) -> int:
    dim = vectors[0].shape[0]
    for i, g in enumerate(vectors):
        if g.ndim != 1:
            raise ValueError(f"gradient {i} is not a vector (ndim={g.ndim})")
        if g.shape[0] != dim:
            raise ValueError(
                f"gradient {i} has dimension {g.shape[0]}, expected {dim}"
            )
    return dim


def shared_gradient(old_grads: list[np.ndarray]) -> np.ndarray:
    """Mean of the old-task gradients, accumulated in ascending task order."""
    if not old_grads:
        raise ValueError("need at least one old-task gradient")
    _check_same_dim(old_grads)
    acc = np.zeros_like(np.asarray(old_grads[0], dtype=np.float64))
    for g in old_grads:
        acc += g
    return acc / len(old_grads)


def task_specific_gradients(
    old_grads: list[np.ndarray], shared: np.ndarray
) -> np.ndarray:
    """Column ``i`` is ``old_grads[i] - shared``; columns sum to zero."""
    if not old_grads:
        raise ValueError("need at least one old-task gradient")
    dim = _check_same_dim(old_grads)
    shared = np.asarray(shared, dtype=np.float64)
    if shared.shape != (dim,):
        raise ValueError(
            f"shared gradient has shape {shared.shape}, expected ({dim},)"
        )
    G = np.column_stack([np.asarray(g, dtype=np.float64) for g in old_grads])
    return G - shared[:, None]


@dataclass
class GradientBundle:
    """New-task gradient plus the decomposed old-task gradients.

    ``shared`` is ``None`` and ``specific`` has zero columns when there
    are no old tasks yet.
    """

    new_grad: np.ndarray
    old_grads: list[np.ndarray] = field(default_factory=list)
    shared: np.ndarray | None = None
    specific: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(self.new_grad.shape[0])

    @property
    def n_memories(self) -> int:
        return len(self.old_grads)


def decompose(new_grad: np.ndarray, old_grads: list[np.ndarray]) -> GradientBundle:
    """Build a :class:`GradientBundle` from raw gradients."""
    new_grad = np.asarray(new_grad, dtype=np.float64)
    if new_grad.ndim != 1:
        raise ValueError("new-task gradient must be a vector")
    if not old_grads:
        return GradientBundle(
            new_grad=new_grad,
            old_grads=[],
            shared=None,
            specific=linalg.empty_basis(new_grad.shape[0]),
        )
    old = [np.asarray(g, dtype=np.float64) for g in old_grads]
    dim = _check_same_dim(old)
    if dim != new_grad.shape[0]:
        raise ValueError(
            f"old gradients have dimension {dim}, new gradient has "
            f"{new_grad.shape[0]}"
        )
    shared = shared_gradient(old)
    specific = task_specific_gradients(old, shared)
    return GradientBundle(
        new_grad=new_grad, old_grads=old, shared=shared, specific=specific
    )
