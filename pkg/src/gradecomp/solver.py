"""Constrained gradient-update solvers.

The main solver finds the update ``w`` closest to the new-task gradient
``g`` subject to a non-negative inner product with the shared gradient
and orthogonality to the span of an orthonormal basis ``B``.  The closed
form has two branches: project ``g`` out of the span, and, when the
projected gradient still conflicts with the shared gradient, reflect the
conflicting component away as well.

Also here: an independent brute-force KKT oracle used to cross-check the
closed form, the basis-relaxation strategies, and the three baseline
update rules (single averaged constraint, single random-memory
constraint, and the per-memory inequality QP solved through its dual).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg

RELAX_FULL = "full"
RELAX_PCA = "pca"
RELAX_FIRST_K = "first_k"
RELAX_LAST_K = "last_k"
RELAXATIONS = (RELAX_FULL, RELAX_PCA, RELAX_FIRST_K, RELAX_LAST_K)

MODE_CONCATENATED = "concatenated"
MODE_LAYERWISE = "layerwise"
MODES = (MODE_CONCATENATED, MODE_LAYERWISE)

PROJECT_ONLY = "project_only"
PROJECT_AND_REFLECT = "project_and_reflect"

# below this fraction of ||g_bar||^2, the projected shared gradient is
# treated as numerically zero and the reflect branch falls back to Pg
DEGENERATE_DENOM_REL = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    """How to build the constraint basis and where to apply the solve."""

    relaxation: str = RELAX_FULL
    k: int | None = None
    rank_tol: float = linalg.DEFAULT_RANK_TOL
    mode: str = MODE_CONCATENATED

    def __post_init__(self):
        if self.relaxation not in RELAXATIONS:
            raise ValueError(f"unknown relaxation {self.relaxation!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.relaxation != RELAX_FULL:
            if self.k is None or self.k < 1:
                raise ValueError(
                    f"relaxation {self.relaxation!r} requires k >= 1, got {self.k}"
                )
        if self.rank_tol <= 0.0:
            raise ValueError("rank_tol must be positive")


@dataclass
class UpdateResult:
    """Solution of one constrained update.

    ``shared_alignment`` is the inner product between the shared gradient
    and the projected new-task gradient; the reflect branch is taken
    exactly when it is negative.  ``degenerate`` marks reflect-branch
    calls where the shared gradient lay (numerically) inside the
    constraint span, in which case ``w`` falls back to the plain
    projection.  For layerwise solves, ``per_layer`` carries the
    per-segment results in layout order and the top-level fields
    aggregate them (alignment summed; branch is ``project_only`` only if
    every segment projected).
    """

    w: np.ndarray
    branch: str
    shared_alignment: float
    degenerate: bool = False
    per_layer: tuple[tuple[str, "UpdateResult"], ...] | None = None


def solve_update(g: np.ndarray, g_bar: np.ndarray, B: np.ndarray) -> UpdateResult:
    """Closest update to ``g`` that respects both constraint families.

    Returns ``P g`` when the projected gradient already has non-negative
    inner product with ``g_bar``; otherwise removes the conflicting
    shared component: ``P g - (g_bar' P g / g_bar' P g_bar) P g_bar``.
    """
    Pg = linalg.apply_projection(B, g)
    align = float(g_bar @ Pg)
    if align >= 0.0:
        return UpdateResult(w=Pg, branch=PROJECT_ONLY, shared_alignment=align)
    Pg_bar = linalg.apply_projection(B, g_bar)
    denom = float(g_bar @ Pg_bar)
    if denom < DEGENERATE_DENOM_REL * float(g_bar @ g_bar):
        return UpdateResult(
            w=Pg, branch=PROJECT_AND_REFLECT, shared_alignment=align, degenerate=True
        )
    w = Pg - (align / denom) * Pg_bar
    return UpdateResult(w=w, branch=PROJECT_AND_REFLECT, shared_alignment=align)


def qp_oracle(g: np.ndarray, g_bar: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Brute-force reference solution of the constrained update.

    Minimizes ``0.5 * ||w - g||^2`` subject to ``g_bar' w >= 0`` and
    ``B' w = 0`` by enumerating the two multiplier cases of the
    stationarity system (inequality inactive / active), solving each with
    dense linear algebra, and returning the feasible candidate with the
    smaller objective.  Shares no code path with :func:`solve_update`
    beyond basic array ops; intended for small dimensions.
    """
    g = np.asarray(g, dtype=np.float64)
    g_bar = np.asarray(g_bar, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    n = g.shape[0]
    r = B.shape[1]
    scale = float(np.linalg.norm(g_bar)) * float(np.linalg.norm(g))
    feas_tol = 1e-10 * max(scale, 1e-30)

    candidates: list[np.ndarray] = []

    # case 1: inequality inactive (multiplier zero).  Stationarity gives
    # w = g - B lam with B' w = 0, so (B'B) lam = B'g.
    if r > 0:
        lam, *_ = np.linalg.lstsq(B.T @ B, B.T @ g, rcond=None)
        w0 = g - B @ lam
    else:
        w0 = g.copy()
    if float(g_bar @ w0) >= -feas_tol:
        candidates.append(w0)

    # case 2: inequality active.  Solve the full stationarity system
    #   [ I      -g_bar  B ] [ w  ]   [ g ]
    #   [ g_bar'  0      0 ] [ mu ] = [ 0 ]
    #   [ B'      0      0 ] [ lam]   [ 0 ]
    size = n + 1 + r
    kkt = np.zeros((size, size))
    kkt[:n, :n] = np.eye(n)
    kkt[:n, n] = -g_bar
    kkt[n, :n] = g_bar
    if r > 0:
        kkt[:n, n + 1:] = B
        kkt[n + 1:, :n] = B.T
    rhs = np.zeros(size)
    rhs[:n] = g
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    w1 = sol[:n]
    mu = float(sol[n])
    if mu >= -1e-10 and abs(float(g_bar @ w1)) <= max(feas_tol, 1e-8 * max(scale, 1.0)):
        candidates.append(w1)

    if not candidates:
        # numerically degenerate instance: fall back to the inactive case
        candidates.append(w0)
    objectives = [float((w - g) @ (w - g)) for w in candidates]
    return candidates[int(np.argmin(objectives))]


def relax_basis(G_specific: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Constraint basis for a specific-gradient matrix under ``cfg``.

    ``full`` orthonormalizes every column; ``pca`` keeps the top-k
    principal directions; ``first_k``/``last_k`` keep only the leading or
    trailing k columns (column i belongs to memory i) before
    orthonormalizing.
    """
    G = np.asarray(G_specific, dtype=np.float64)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    if cfg.relaxation == RELAX_FULL:
        return linalg.modified_gram_schmidt(G, cfg.rank_tol)
    if cfg.relaxation == RELAX_PCA:
        return linalg.gram_pca(G, cfg.k, cfg.rank_tol)
    k = min(cfg.k, G.shape[1])
    if cfg.relaxation == RELAX_FIRST_K:
        return linalg.modified_gram_schmidt(G[:, :k], cfg.rank_tol)
    return linalg.modified_gram_schmidt(G[:, G.shape[1] - k:], cfg.rank_tol)


def agem_update(g: np.ndarray, g_bar: np.ndarray) -> np.ndarray:
    """Single averaged constraint: project out the conflicting component.

    Returns ``g`` unchanged when ``g_bar' g >= 0`` (or when ``g_bar`` is
    the zero vector), else ``g - (g_bar' g / g_bar' g_bar) g_bar``.
    """
    g = np.asarray(g, dtype=np.float64)
    g_bar = np.asarray(g_bar, dtype=np.float64)
    dot = float(g_bar @ g)
    if dot >= 0.0:
        return g.copy()
    denom = float(g_bar @ g_bar)
    if denom == 0.0:
        return g.copy()
    return g - (dot / denom) * g_bar


def sgem_update(
    g: np.ndarray, old_grads: list[np.ndarray], rng: np.random.Generator
) -> np.ndarray:
    """Constrain against one memory gradient drawn uniformly from ``rng``."""
    if not old_grads:
        raise ValueError("need at least one old-task gradient")
    idx = int(rng.integers(len(old_grads)))
    return agem_update(g, old_grads[idx])


def _power_iteration(M: np.ndarray, iters: int = 100) -> float:
    """Largest eigenvalue of a small symmetric PSD matrix."""
    n = M.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(iters):
        u = M @ v
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 0.0
        v = u / norm
        lam = float(v @ (M @ v))
    return lam


def gem_qp_update(
    g: np.ndarray,
    old_grads: list[np.ndarray],
    max_iter: int = 100_000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Per-memory inequality QP: closest ``w`` to ``g`` with ``g_i' w >= 0``.

    Solved through the dual ``min_{v >= 0} 0.5 v' (G G') v + (G g)' v``
    (rows of ``G`` are the memory gradients) by projected gradient
    descent with step ``1 / lambda_max(G G')``; the primal update is
    recovered as ``w = g + G' v``.  A single memory reduces to the
    closed-form averaged constraint and is returned directly.
    """
    if not old_grads:
        raise ValueError("need at least one old-task gradient")
    if len(old_grads) == 1:
        return agem_update(g, old_grads[0])
    g = np.asarray(g, dtype=np.float64)
    G = np.stack([np.asarray(gi, dtype=np.float64) for gi in old_grads])
    q = G @ g
    if (q >= 0.0).all():
        return g.copy()

    M = G @ G.T
    lam_max = _power_iteration(M)
    if lam_max <= 0.0:
        return g.copy()
    step = 1.0 / lam_max

    v = np.zeros(G.shape[0])
    residual = np.inf
    for _ in range(max_iter):
        grad = M @ v + q
        projected = np.where(v > 0.0, grad, np.minimum(grad, 0.0))
        residual = float(np.linalg.norm(projected))
        if residual < tol:
            break
        v = np.maximum(0.0, v - step * grad)
    else:
        warnings.warn(
            f"dual projected gradient hit the {max_iter}-iteration cap "
            f"(projected-gradient norm {residual:.3e})",
            RuntimeWarning,
        )
    return g + G.T @ v
