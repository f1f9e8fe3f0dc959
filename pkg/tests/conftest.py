"""Session-wide instrumentation: every constrained solve executed by any
test (including full training runs) must satisfy both constraint
families within tolerance.  Violations fail the triggering test with
the offending instance attached."""

import numpy as np
import pytest

from gradecomp import solver

CALL_STATS = {"calls": 0}


@pytest.fixture(scope="session", autouse=True)
def feasibility_guard():
    original = solver.solve_update

    def checked(g, g_bar, B, *args, **kwargs):
        res = original(g, g_bar, B, *args, **kwargs)
        CALL_STATS["calls"] += 1
        norm_g = float(np.linalg.norm(g))
        if B.shape[1]:
            eq = float(np.abs(B.T @ res.w).max())
            assert eq <= 1e-8 * max(norm_g, 1e-300), (
                f"equality constraint violated: |B'w| = {eq:.3e} for ||g|| = {norm_g:.3e}"
            )
        if not res.degenerate:
            ineq = float(g_bar @ res.w)
            floor = -1e-8 * float(np.linalg.norm(g_bar)) * norm_g
            assert ineq >= floor, (
                f"inequality constraint violated: shared'w = {ineq:.3e} < {floor:.3e}"
            )
        return res

    solver.solve_update = checked
    try:
        yield CALL_STATS
    finally:
        solver.solve_update = original
