"""Per-layer dispatch of the constrained update.

A flat parameter vector is segmented by a :class:`ParamLayout`; the
decomposition and solve then run independently on each segment, so every
layer decides its own projection branch instead of being dominated by
whichever layer carries the largest gradient magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import linalg, solver
from .decomp import GradientBundle
from .solver import (
    MODE_CONCATENATED,
    MODE_LAYERWISE,
    PROJECT_AND_REFLECT,
    PROJECT_ONLY,
    SolverConfig,
    UpdateResult,
)


class Segment(NamedTuple):
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class ParamLayout:
    """Contiguous, non-overlapping named segments covering ``[0, total)``."""

    segments: tuple[Segment, ...]
    total: int

    def __post_init__(self):
        if not self.segments:
            raise ValueError("layout needs at least one segment")
        expected = 0
        for seg in self.segments:
            if seg.offset != expected:
                raise ValueError(
                    f"segment {seg.name!r} starts at {seg.offset}, expected {expected}"
                )
            if seg.length < 1:
                raise ValueError(f"segment {seg.name!r} has non-positive length")
            expected += seg.length
        if expected != self.total:
            raise ValueError(
                f"segments cover [0, {expected}) but total is {self.total}"
            )

    @classmethod
    def from_lengths(cls, named_lengths: list[tuple[str, int]]) -> "ParamLayout":
        segments = []
        offset = 0
        for name, length in named_lengths:
            segments.append(Segment(name, offset, int(length)))
            offset += int(length)
        return cls(segments=tuple(segments), total=offset)

    def slices(self) -> list[slice]:
        return [slice(s.offset, s.offset + s.length) for s in self.segments]


class LayerAlignment(NamedTuple):
    name: str
    alignment: float
    contributes: bool


@dataclass
class LossChangeReport:
    """First-order prediction of the replay-loss change per unit step size.

    ``predicted_delta`` is the loss change divided by the learning rate:
    multiply by eta to get the predicted change after stepping by
    ``-eta * w``.  In concatenated mode the per-layer entries split the
    single global alignment across segments (they sum to it) and all
    share the global branch flag; in layerwise mode each entry is that
    layer's own alignment under its own projection and only non-negative
    entries contribute.  ``realized_delta`` is ``-shared' w`` for the
    update actually supplied, which coincides with ``predicted_delta``
    when ``w`` came from the matching unrelaxed solve.
    """

    per_layer: tuple[LayerAlignment, ...]
    predicted_delta: float
    realized_delta: float
    mode: str


def split_by_layer(v: np.ndarray, layout: ParamLayout) -> list[np.ndarray]:
    """Per-segment views of ``v`` in layout order."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != layout.total:
        raise ValueError(
            f"vector of dimension {v.shape} does not match layout total {layout.total}"
        )
    return [v[s] for s in layout.slices()]


def layerwise_solve(
    bundle: GradientBundle, layout: ParamLayout, cfg: SolverConfig
) -> UpdateResult:
    """Run the constrained solve independently on every layout segment.

    The bundle is decomposed once; each segment solve uses the row slices
    of the shared and specific components restricted to that segment (the
    mean and the subtraction commute with slicing).  The per-segment
    updates are concatenated in layout order.
    """
    if bundle.shared is None:
        raise ValueError("bundle has no old-task gradients to constrain against")
    if bundle.dim != layout.total:
        raise ValueError(
            f"bundle dimension {bundle.dim} does not match layout total {layout.total}"
        )
    g = bundle.new_grad
    g_bar = bundle.shared
    G = bundle.specific

    w = np.empty(layout.total)
    per_layer: list[tuple[str, UpdateResult]] = []
    total_alignment = 0.0
    all_project = True
    any_degenerate = False
    for seg, sl in zip(layout.segments, layout.slices()):
        B_seg = solver.relax_basis(G[sl, :], cfg)
        res = solver.solve_update(g[sl], g_bar[sl], B_seg)
        w[sl] = res.w
        per_layer.append((seg.name, res))
        total_alignment += res.shared_alignment
        all_project = all_project and res.branch == PROJECT_ONLY
        any_degenerate = any_degenerate or res.degenerate
    return UpdateResult(
        w=w,
        branch=PROJECT_ONLY if all_project else PROJECT_AND_REFLECT,
        shared_alignment=total_alignment,
        degenerate=any_degenerate,
        per_layer=tuple(per_layer),
    )


def predicted_loss_change(
    bundle: GradientBundle,
    w: np.ndarray,
    layout: ParamLayout,
    mode: str,
    rank_tol: float = solver.SolverConfig().rank_tol,
) -> LossChangeReport:
    """First-order replay-loss change for an update in the given mode.

    Concatenated mode evaluates the global alignment between the shared
    gradient and the projected new-task gradient: the predicted delta is
    its negative when non-negative, else zero.  Layerwise mode sums the
    negated per-layer alignments over the layers whose own alignment is
    non-negative (the others contribute zero by construction).
    """
    if bundle.shared is None:
        raise ValueError("bundle has no old-task gradients")
    if mode not in (MODE_CONCATENATED, MODE_LAYERWISE):
        raise ValueError(f"unknown mode {mode!r}")
    w = np.asarray(w, dtype=np.float64)
    g = bundle.new_grad
    g_bar = bundle.shared
    G = bundle.specific
    cfg = SolverConfig(rank_tol=rank_tol)
    realized = -float(g_bar @ w)

    if mode == MODE_CONCATENATED:
        B = solver.relax_basis(G, cfg)
        Pg = linalg.apply_projection(B, g)
        global_alignment = float(g_bar @ Pg)
        contributes = global_alignment >= 0.0
        entries = []
        for seg, sl in zip(layout.segments, layout.slices()):
            entries.append(
                LayerAlignment(seg.name, float(g_bar[sl] @ Pg[sl]), contributes)
            )
        delta = -global_alignment if contributes else 0.0
        return LossChangeReport(
            per_layer=tuple(entries),
            predicted_delta=delta,
            realized_delta=realized,
            mode=mode,
        )

    entries = []
    delta = 0.0
    for seg, sl in zip(layout.segments, layout.slices()):
        B_seg = solver.relax_basis(G[sl, :], cfg)
        Pg_seg = linalg.apply_projection(B_seg, g[sl])
        alignment = float(g_bar[sl] @ Pg_seg)
        contributes = alignment >= 0.0
        if contributes:
            delta -= alignment
        entries.append(LayerAlignment(seg.name, alignment, contributes))
    return LossChangeReport(
        per_layer=tuple(entries),
        predicted_delta=delta,
        realized_delta=realized,
        mode=mode,
    )
