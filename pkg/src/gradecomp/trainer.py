"""Sequential training over a task stream with pluggable update rules.

Each training step computes the new-task gradient, samples one batch
from every stored memory, decomposes the memory gradients into shared
and specific components, builds the constraint basis for the selected
method, solves for the update (concatenated or per layer), and applies
it.  With no stored memories every method degenerates to plain SGD.

All randomness is drawn from generators seeded as ``run_seed + offset``
with one fixed offset per role, so enabling one feature never perturbs
the random streams of another:

====================  =======
role                  offset
====================  =======
model initialization  11
memory-batch sampling 23
random-memory choice  37
reservoir selection   41 (+ task index)
replay-buffer split   53
====================  =======
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import layerwise as lw
from . import memory as mem
from . import solver
from .decomp import decompose, shared_gradient
from .model import Batch, MlpModel
from .tasks import SCENARIO_SPLIT, TaskStream

SEED_MODEL_INIT = 11
SEED_MEMORY_SAMPLING = 23
SEED_SGEM_CHOICE = 37
SEED_RESERVOIR = 41
SEED_REPLAY_SPLIT = 53

KIND_SINGLE = "single"
KIND_AGEM = "agem"
KIND_SGEM = "sgem"
KIND_GEM = "gem"
KIND_OURS = "ours"
KINDS = (KIND_SINGLE, KIND_AGEM, KIND_SGEM, KIND_GEM, KIND_OURS)


@dataclass(frozen=True)
class MethodVariant:
    """Update rule selector.

    ``lgu`` applies the rule independently per layout segment.  For the
    decomposed method the solver config's mode must agree with ``lgu``;
    use the helpers below instead of constructing by hand.
    """

    kind: str
    lgu: bool = False
    solver_cfg: solver.SolverConfig = field(default_factory=solver.SolverConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind == KIND_OURS:
            layer_mode = self.solver_cfg.mode == solver.MODE_LAYERWISE
            if layer_mode != self.lgu:
                raise ValueError(
                    "lgu flag and solver mode disagree: "
                    f"lgu={self.lgu}, mode={self.solver_cfg.mode!r}"
                )

    @property
    def name(self) -> str:
        parts = [self.kind]
        if self.kind == KIND_OURS and self.solver_cfg.relaxation != solver.RELAX_FULL:
            parts.append(f"{self.solver_cfg.relaxation}{self.solver_cfg.k}")
        if self.lgu:
            parts.append("lgu")
        return "+".join(parts)


def variant_single() -> MethodVariant:
    return MethodVariant(kind=KIND_SINGLE)


def variant_agem(lgu: bool = False) -> MethodVariant:
    return MethodVariant(kind=KIND_AGEM, lgu=lgu)


def variant_sgem() -> MethodVariant:
    return MethodVariant(kind=KIND_SGEM)


def variant_gem(lgu: bool = False) -> MethodVariant:
    return MethodVariant(kind=KIND_GEM, lgu=lgu)


def variant_ours(
    relaxation: str = solver.RELAX_FULL, k: int | None = None, lgu: bool = False
) -> MethodVariant:
    cfg = solver.SolverConfig(
        relaxation=relaxation,
        k=k,
        mode=solver.MODE_LAYERWISE if lgu else solver.MODE_CONCATENATED,
    )
    return MethodVariant(kind=KIND_OURS, lgu=lgu, solver_cfg=cfg)


#: ablation shorthand: (a) plain fine-tuning, (b) averaged constraint,
#: (c) averaged constraint per layer, (d) decomposed constraints,
#: (e) decomposed with top-k principal directions, (f) decomposed per
#: layer, (g) decomposed per layer with top-k principal directions.
def variant_from_letter(letter: str, k: int | None = None) -> MethodVariant:
    letter = letter.lower()
    if letter == "a":
        return variant_single()
    if letter == "b":
        return variant_agem()
    if letter == "c":
        return variant_agem(lgu=True)
    if letter == "d":
        return variant_ours()
    if letter == "e":
        return variant_ours(relaxation=solver.RELAX_PCA, k=k or 1)
    if letter == "f":
        return variant_ours(lgu=True)
    if letter == "g":
        return variant_ours(relaxation=solver.RELAX_PCA, k=k or 1, lgu=True)
    raise ValueError(f"unknown ablation letter {letter!r}")


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    epochs: int = 1
    bs_new: int = 10
    bs_old: int = 20
    memory_size: int = 256
    hidden_sizes: tuple[int, ...] = (100, 100)
    seed: int = 0
    variant: MethodVariant = field(default_factory=variant_single)
    memory_policy: str = mem.POLICY_RING
    replay_split_n: int | None = None
    multi_head: bool | None = None
    per_tensor_layout: bool = False

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if min(self.bs_new, self.bs_old, self.memory_size) < 1:
            raise ValueError("batch sizes and memory size must be positive")
        if self.replay_split_n is not None and self.replay_split_n < 1:
            raise ValueError("replay_split_n must be at least 1")


@dataclass
class StepTrace:
    task: int = -1
    iteration: int = -1
    loss_new: float = 0.0
    loss_mem_mean: float | None = None
    branch: str | None = None
    alignment: float | None = None
    per_layer_alignments: tuple[float, ...] | None = None
    solver_seconds: float = 0.0
    update_norm: float = 0.0


def _memory_gradients(
    model: MlpModel,
    memories: list[mem.EpisodicMemory],
    bs_old: int,
    rng: np.random.Generator,
) -> tuple[list[np.ndarray], float]:
    """One sampled batch and gradient per memory, ascending task order."""
    grads = []
    losses = []
    for memory in memories:
        batch = mem.sample_memory_batch(memory, bs_old, rng)
        loss, grad = model.loss_and_grad(batch)
        grads.append(grad)
        losses.append(loss)
    return grads, float(np.mean(losses))


def _solve_for_variant(
    variant: MethodVariant,
    model: MlpModel,
    g: np.ndarray,
    old_grads: list[np.ndarray],
    sgem_rng: np.random.Generator,
    trace: StepTrace,
) -> np.ndarray:
    layout = model.layout
    if variant.kind == KIND_OURS:
        bundle = decompose(g, old_grads)
        if variant.lgu:
            res = lw.layerwise_solve(bundle, layout, variant.solver_cfg)
            trace.per_layer_alignments = tuple(
                r.shared_alignment for _, r in res.per_layer
            )
        else:
            B = solver.relax_basis(bundle.specific, variant.solver_cfg)
            res = solver.solve_update(g, bundle.shared, B)
        trace.branch = res.branch
        trace.alignment = res.shared_alignment
        return res.w

    if variant.kind == KIND_AGEM:
        g_bar = shared_gradient(old_grads)
        if variant.lgu:
            w = np.empty_like(g)
            alignments = []
            for sl in layout.slices():
                w[sl] = solver.agem_update(g[sl], g_bar[sl])
                alignments.append(float(g_bar[sl] @ g[sl]))
            trace.per_layer_alignments = tuple(alignments)
            trace.alignment = float(sum(alignments))
            return w
        trace.alignment = float(g_bar @ g)
        return solver.agem_update(g, g_bar)

    if variant.kind == KIND_SGEM:
        return solver.sgem_update(g, old_grads, sgem_rng)

    # per-memory inequality QP
    if variant.lgu:
        w = np.empty_like(g)
        for sl in layout.slices():
            w[sl] = solver.gem_qp_update(g[sl], [gi[sl] for gi in old_grads])
        return w
    return solver.gem_qp_update(g, old_grads)


def train_step(
    model: MlpModel,
    new_batch: Batch,
    memories: list[mem.EpisodicMemory],
    variant: MethodVariant,
    eta: float,
    mem_rng: np.random.Generator,
    sgem_rng: np.random.Generator,
    bs_old: int = 20,
) -> StepTrace:
    """One parameter update on a new-task batch under the given method.

    With no memories (or the plain fine-tuning method) this is one SGD
    step.  Any non-finite quantity aborts with ``FloatingPointError``.
    """
    trace = StepTrace()
    loss_new, g = model.loss_and_grad(new_batch)
    trace.loss_new = loss_new

    if variant.kind == KIND_SINGLE or not memories:
        w = g
    else:
        old_grads, trace.loss_mem_mean = _memory_gradients(
            model, memories, bs_old, mem_rng
        )
        start = time.perf_counter()
        w = _solve_for_variant(variant, model, g, old_grads, sgem_rng, trace)
        trace.solver_seconds = time.perf_counter() - start
        if not np.isfinite(w).all():
            raise FloatingPointError(
                f"non-finite update for method {variant.name} "
                f"(new-task loss {loss_new:.6g}, "
                f"mean memory loss {trace.loss_mem_mean:.6g})"
            )

    model.apply_update(w, eta)
    trace.update_norm = float(np.linalg.norm(w))
    return trace


def _minibatches(batch: Batch, bs: int):
    """Sequential minibatches in stored order; the last one may be short."""
    n = len(batch)
    for start in range(0, n, bs):
        yield Batch(batch.inputs[start: start + bs], batch.labels[start: start + bs])


def train_sequence(
    stream: TaskStream, cfg: TrainConfig
) -> tuple[np.ndarray, list[StepTrace]]:
    """Run the full task sequence and fill the accuracy matrix.

    Row ``t`` holds the accuracy on every test set seen so far after
    finishing task ``t``.  Evaluation restricts the argmax to each
    task's classes for split-class streams (unless ``multi_head``
    overrides it).
    """
    T = len(stream)
    if T == 0:
        raise ValueError("stream has no tasks")
    multi_head = (
        cfg.multi_head
        if cfg.multi_head is not None
        else stream.scenario == SCENARIO_SPLIT
    )
    model = MlpModel(
        [stream.input_dim, *cfg.hidden_sizes, stream.n_classes],
        seed=cfg.seed + SEED_MODEL_INIT,
        per_tensor_layout=cfg.per_tensor_layout,
    )
    mem_rng = np.random.default_rng(cfg.seed + SEED_MEMORY_SAMPLING)
    sgem_rng = np.random.default_rng(cfg.seed + SEED_SGEM_CHOICE)
    split_rng = np.random.default_rng(cfg.seed + SEED_REPLAY_SPLIT)

    coreset = mem.Coreset()
    R = np.full((T, T), np.nan)
    log: list[StepTrace] = []

    for t, task in enumerate(stream.tasks):
        if cfg.replay_split_n is not None and len(coreset) > 0:
            n_parts = min(cfg.replay_split_n, coreset.total_items)
            memories = mem.split_replay_buffer(coreset, n_parts, split_rng)
        else:
            memories = list(coreset)

        iteration = 0
        for _ in range(cfg.epochs):
            for batch in _minibatches(task.train, cfg.bs_new):
                trace = train_step(
                    model,
                    batch,
                    memories,
                    cfg.variant,
                    cfg.eta,
                    mem_rng,
                    sgem_rng,
                    bs_old=cfg.bs_old,
                )
                trace.task = t
                trace.iteration = iteration
                iteration += 1
                log.append(trace)

        coreset.add(
            mem.update_memory(
                task.train,
                cfg.memory_size,
                policy=cfg.memory_policy,
                seed=cfg.seed + SEED_RESERVOIR + t,
                task_id=t,
            )
        )
        for i in range(t + 1):
            subset = stream.tasks[i].class_subset if multi_head else None
            R[t, i] = model.evaluate(stream.tasks[i].test, subset)

    return R, log


@dataclass
class AblationRow:
    name: str
    acc: float
    bwt: float | None
    seconds: float


def run_ablation(
    stream: TaskStream, base_cfg: TrainConfig, variants: list[MethodVariant]
) -> list[AblationRow]:
    """Train every variant on the same stream and seed; tabulate metrics."""
    from . import metrics

    rows = []
    for variant in variants:
        cfg = replace(base_cfg, variant=variant)
        start = time.perf_counter()
        R, _ = train_sequence(stream, cfg)
        seconds = time.perf_counter() - start
        rows.append(
            AblationRow(
                name=variant.name,
                acc=metrics.acc(R),
                bwt=metrics.bwt(R),
                seconds=seconds,
            )
        )
    return rows
