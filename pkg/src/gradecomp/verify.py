"""Self-contained property suites runnable on demand.

Each suite draws seeded random instances, checks one correctness
property against an independent reference (brute-force QP, quadratic
form sign, column-sum identity, finite differences, constraint
residuals), and reports the first failing instance in a JSON-serializable
form so it can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import linalg, solver
from .decomp import decompose
from .model import Batch, MlpModel


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    detail: str
    failing_case: dict | None = field(default=None, repr=False)


def _random_bundle(rng: np.random.Generator, dim: int, n_mem: int):
    old = [rng.standard_normal(dim) for _ in range(n_mem)]
    g = rng.standard_normal(dim)
    return decompose(g, old)


def suite_solver_vs_oracle(
    n_instances: int = 500,
    seed: int = 2024,
    rel_tol: float = 1e-6,
    solve_fn: Callable = None,
) -> SuiteResult:
    """Closed-form solutions must match the brute-force KKT oracle.

    ``solve_fn`` defaults to the production solver; it is injectable so
    a deliberately broken solver can be shown to trip the suite.
    """
    solve = solve_fn or solver.solve_update
    rng = np.random.default_rng(seed)
    worst = 0.0
    branches = {solver.PROJECT_ONLY: 0, solver.PROJECT_AND_REFLECT: 0}
    for i in range(n_instances):
        dim = int(rng.integers(4, 65))
        n_mem = int(rng.integers(2, 9))
        bundle = _random_bundle(rng, dim, n_mem)
        B = linalg.modified_gram_schmidt(bundle.specific)
        res = solve(bundle.new_grad, bundle.shared, B)
        branches[res.branch] += 1
        w_ref = solver.qp_oracle(bundle.new_grad, bundle.shared, B)
        # relative to the instance scale: the optimum itself can be
        # arbitrarily close to zero when the constraints span everything
        denom = max(
            float(np.linalg.norm(w_ref)),
            float(np.linalg.norm(bundle.new_grad)),
            1e-12,
        )
        rel = float(np.linalg.norm(res.w - w_ref)) / denom
        worst = max(worst, rel)
        if rel > rel_tol:
            return SuiteResult(
                name="solver_vs_oracle",
                passed=False,
                checked=i + 1,
                detail=f"relative gap {rel:.3e} exceeds {rel_tol:.0e} on instance {i}",
                failing_case={
                    "instance": i,
                    "g": bundle.new_grad.tolist(),
                    "old_grads": [x.tolist() for x in bundle.old_grads],
                    "w_solver": res.w.tolist(),
                    "w_oracle": w_ref.tolist(),
                },
            )
    detail = (
        f"max relative gap {worst:.3e} over {n_instances} instances "
        f"({branches[solver.PROJECT_ONLY]} project, "
        f"{branches[solver.PROJECT_AND_REFLECT]} reflect)"
    )
    ok = min(branches.values()) > 0
    if not ok:
        return SuiteResult(
            "solver_vs_oracle", False, n_instances,
            "random instances failed to exercise both branches: " + detail, None,
        )
    return SuiteResult("solver_vs_oracle", True, n_instances, detail)


def suite_projection_psd(n_instances: int = 100, seed: int = 2025) -> SuiteResult:
    """The projection must never produce a negative quadratic form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        dim = int(rng.integers(3, 40))
        n_cols = int(rng.integers(1, min(dim, 6)))
        B = linalg.modified_gram_schmidt(rng.standard_normal((dim, n_cols)))
        v = rng.standard_normal(dim)
        quad = float(v @ linalg.apply_projection(B, v))
        floor = -1e-10 * float(v @ v)
        worst = min(worst, quad)
        if quad < floor:
            return SuiteResult(
                name="projection_psd",
                passed=False,
                checked=i + 1,
                detail=f"v'Pv = {quad:.3e} below {floor:.3e} on instance {i}",
                failing_case={"instance": i, "B": B.tolist(), "v": v.tolist()},
            )
    return SuiteResult(
        "projection_psd", True, n_instances, f"min v'Pv = {worst:.3e} (>= -1e-10 ||v||^2)"
    )


def suite_decomposition_zero_sum(n_instances: int = 100, seed: int = 2026) -> SuiteResult:
    """Specific columns must sum to zero, with numerical rank <= t - 2."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        dim = int(rng.integers(4, 80))
        n_mem = int(rng.integers(1, 9))
        bundle = _random_bundle(rng, dim, n_mem)
        col_norms = np.linalg.norm(bundle.specific, axis=0)
        scale = float(col_norms.max()) if col_norms.size else 0.0
        resid = float(np.abs(bundle.specific.sum(axis=1)).max())
        rel = resid / scale if scale > 0.0 else 0.0
        worst = max(worst, rel)
        rank = linalg.modified_gram_schmidt(bundle.specific).shape[1]
        ok = rel < 1e-10 and rank <= max(0, n_mem - 1)
        if not ok:
            return SuiteResult(
                name="decomposition_zero_sum",
                passed=False,
                checked=i + 1,
                detail=(
                    f"zero-sum residual {rel:.3e} or rank {rank} > {n_mem - 1} "
                    f"on instance {i}"
                ),
                failing_case={
                    "instance": i,
                    "old_grads": [x.tolist() for x in bundle.old_grads],
                },
            )
    return SuiteResult(
        "decomposition_zero_sum", True, n_instances, f"max zero-sum residual {worst:.3e}"
    )


def suite_gradient_check(n_models: int = 20, seed: int = 2027) -> SuiteResult:
    """Backprop must match central finite differences coordinate-wise."""
    rng = np.random.default_rng(seed)
    step = 1e-5
    worst = 0.0
    for i in range(n_models):
        sizes = [int(rng.integers(3, 7)), int(rng.integers(4, 9)), int(rng.integers(2, 5))]
        model = MlpModel(sizes, seed=int(rng.integers(0, 2**31)))
        n_ex = int(rng.integers(2, 7))
        batch = Batch(
            rng.standard_normal((n_ex, sizes[0])) * 2.0,
            rng.integers(0, sizes[-1], size=n_ex),
        )
        _, grad = model.loss_and_grad(batch)
        fd = np.empty_like(grad)
        for j in range(model.n_params):
            orig = model.params[j]
            model.params[j] = orig + step
            up, _ = model.loss_and_grad(batch)
            model.params[j] = orig - step
            down, _ = model.loss_and_grad(batch)
            model.params[j] = orig
            fd[j] = (up - down) / (2.0 * step)
        floor = max(1e-6, 1e-3 * float(np.abs(fd).max()))
        rel = float(
            (np.abs(grad - fd) / np.maximum(np.abs(fd), floor)).max()
        )
        worst = max(worst, rel)
        if rel > 1e-4:
            return SuiteResult(
                name="gradient_check",
                passed=False,
                checked=i + 1,
                detail=f"max relative error {rel:.3e} exceeds 1e-4 on model {i}",
                failing_case={
                    "instance": i,
                    "layer_sizes": sizes,
                    "model_seed": model.seed,
                    "inputs": batch.inputs.tolist(),
                    "labels": batch.labels.tolist(),
                },
            )
    return SuiteResult(
        "gradient_check", True, n_models, f"max relative error {worst:.3e}"
    )


def suite_constraint_feasibility(
    n_instances: int = 200, seed: int = 2028, solve_fn: Callable = None
) -> SuiteResult:
    """Every solve must respect both constraint families within tolerance."""
    solve = solve_fn or solver.solve_update
    rng = np.random.default_rng(seed)
    worst_eq = 0.0
    worst_ineq = 0.0
    for i in range(n_instances):
        dim = int(rng.integers(4, 65))
        n_mem = int(rng.integers(1, 9))
        bundle = _random_bundle(rng, dim, n_mem)
        B = linalg.modified_gram_schmidt(bundle.specific)
        res = solve(bundle.new_grad, bundle.shared, B)
        norm_g = float(np.linalg.norm(bundle.new_grad))
        norm_bar = float(np.linalg.norm(bundle.shared))
        eq = float(np.abs(B.T @ res.w).max()) if B.shape[1] else 0.0
        ineq = float(bundle.shared @ res.w)
        worst_eq = max(worst_eq, eq / max(norm_g, 1e-12))
        worst_ineq = min(worst_ineq, ineq / max(norm_bar * norm_g, 1e-12))
        ok = eq <= 1e-8 * norm_g and ineq >= -1e-8 * norm_bar * norm_g
        if not ok:
            return SuiteResult(
                name="constraint_feasibility",
                passed=False,
                checked=i + 1,
                detail=(
                    f"|B'w|={eq:.3e} or shared alignment {ineq:.3e} out of "
                    f"tolerance on instance {i}"
                ),
                failing_case={
                    "instance": i,
                    "g": bundle.new_grad.tolist(),
                    "old_grads": [x.tolist() for x in bundle.old_grads],
                },
            )
    return SuiteResult(
        "constraint_feasibility",
        True,
        n_instances,
        f"max |B'w|/||g|| = {worst_eq:.3e}, min alignment ratio = {worst_ineq:.3e}",
    )


def run_all_suites(solve_fn: Callable = None) -> list[SuiteResult]:
    return [
        suite_solver_vs_oracle(solve_fn=solve_fn),
        suite_projection_psd(),
        suite_decomposition_zero_sum(),
        suite_gradient_check(),
        suite_constraint_feasibility(solve_fn=solve_fn),
    ]
