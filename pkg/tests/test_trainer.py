"""Training loop: single steps, full sequences, variant equivalences.

The hand-computed check rebuilds the constrained update from raw
gradients with plain numpy (mean, subtraction, QR, projection formula)
and compares against the update the trainer actually applied.
"""

import numpy as np
import pytest

from gradecomp import metrics, trainer
from gradecomp.memory import update_memory
from gradecomp.model import Batch, MlpModel
from gradecomp.tasks import gen_permuted_tasks, gen_synthetic_base
from gradecomp.trainer import (
    TrainConfig,
    train_sequence,
    train_step,
    variant_agem,
    variant_from_letter,
    variant_ours,
    variant_single,
)


def make_stream(seed, classes=3, dim=8, npc=30, T=3):
    base = gen_synthetic_base(classes, dim, npc, seed=seed)
    return gen_permuted_tasks(base, T=T, seed=seed + 1)


def rngs():
    return np.random.default_rng(1000), np.random.default_rng(2000)


class TestTrainStep:
    def test_empty_coreset_is_plain_sgd(self):
        stream = make_stream(1)
        batch = Batch(stream.tasks[0].train.inputs[:10], stream.tasks[0].train.labels[:10])
        for variant in (variant_single(), variant_ours(), variant_agem()):
            model = MlpModel([8, 6, 3], seed=2)
            reference = MlpModel([8, 6, 3], seed=2)
            _, g = reference.loss_and_grad(batch)
            reference.apply_update(g, 0.1)
            mem_rng, sgem_rng = rngs()
            train_step(model, batch, [], variant, 0.1, mem_rng, sgem_rng)
            assert np.array_equal(model.params, reference.params)

    def test_single_memory_ours_equals_agem(self):
        # zero-rank specific space: the decomposed method reduces to the
        # averaged constraint bit for bit
        stream = make_stream(3)
        memory = update_memory(stream.tasks[0].train, m=16, task_id=0)
        batch = Batch(stream.tasks[1].train.inputs[:10], stream.tasks[1].train.labels[:10])
        model_a = MlpModel([8, 6, 3], seed=4)
        model_b = MlpModel([8, 6, 3], seed=4)
        train_step(model_a, batch, [memory], variant_ours(), 0.1, *rngs())
        train_step(model_b, batch, [memory], variant_agem(), 0.1, *rngs())
        assert np.array_equal(model_a.params, model_b.params)

    def test_update_matches_hand_computed_closed_form(self):
        rng = np.random.default_rng(700)
        stream = make_stream(5)
        memories = [
            update_memory(stream.tasks[t].train, m=12, task_id=t) for t in range(2)
        ]
        batch = Batch(
            stream.tasks[2].train.inputs[:8], stream.tasks[2].train.labels[:8]
        )
        model = MlpModel([8, 5, 3], seed=6)
        before = model.params.copy()

        # collect exactly the gradients the step will see, then restore
        probe = model.clone()
        _, g = probe.loss_and_grad(batch)
        mem_rng, sgem_rng = rngs()
        mem_rng_probe = np.random.default_rng(1000)
        old = []
        from gradecomp.memory import sample_memory_batch

        for memory in memories:
            mb = sample_memory_batch(memory, 20, mem_rng_probe)
            old.append(probe.loss_and_grad(mb)[1])

        # independent closed-form computation in plain numpy
        g_bar = (old[0] + old[1]) / 2.0
        spec = np.stack([old[0] - g_bar, old[1] - g_bar], axis=1)
        if np.linalg.norm(spec) > 1e-12 * max(1, np.abs(spec).max()):
            Q, _ = np.linalg.qr(spec)
            keep = [
                j
                for j in range(Q.shape[1])
                if np.linalg.norm(spec.T @ Q[:, j]) > 1e-10
            ]
            Q = Q[:, keep]
        else:
            Q = np.zeros((g.size, 0))
        Pg = g - Q @ (Q.T @ g)
        align = g_bar @ Pg
        if align >= 0:
            w_hand = Pg
        else:
            Pgb = g_bar - Q @ (Q.T @ g_bar)
            w_hand = Pg - (align / (g_bar @ Pgb)) * Pgb

        eta = 0.1
        train_step(model, batch, memories, variant_ours(), eta, mem_rng, sgem_rng)
        applied = (before - model.params) / eta
        np.testing.assert_allclose(applied, w_hand, atol=1e-10 * max(1, np.abs(w_hand).max()))

    def test_nan_batch_aborts(self):
        model = MlpModel([4, 3], seed=0)
        bad = Batch(np.full((2, 4), np.nan), np.array([0, 1]))
        with pytest.raises(FloatingPointError):
            train_step(model, bad, [], variant_single(), 0.1, *rngs())

    def test_trace_contents(self):
        stream = make_stream(7)
        memories = [update_memory(stream.tasks[0].train, m=8, task_id=0)]
        batch = Batch(stream.tasks[1].train.inputs[:6], stream.tasks[1].train.labels[:6])
        model = MlpModel([8, 6, 3], seed=8)
        trace = train_step(model, batch, memories, variant_ours(lgu=True), 0.1, *rngs())
        assert trace.loss_new > 0
        assert trace.loss_mem_mean is not None
        assert trace.branch is not None
        assert trace.per_layer_alignments is not None
        assert len(trace.per_layer_alignments) == 2
        assert trace.update_norm > 0


class TestTrainSequence:
    def test_single_task_matrix(self):
        stream = make_stream(9, T=1)
        cfg = TrainConfig(seed=1, variant=variant_single(), hidden_sizes=(6,))
        R, log = train_sequence(stream, cfg)
        assert R.shape == (1, 1)
        assert 0.0 <= R[0, 0] <= 1.0
        assert all(t.task == 0 for t in log)

    def test_first_task_identical_across_variants(self):
        stream = make_stream(10, T=2)
        rows = {}
        for letter in ("a", "d"):
            cfg = TrainConfig(
                seed=3, variant=variant_from_letter(letter), hidden_sizes=(6,)
            )
            R, _ = train_sequence(stream, cfg)
            rows[letter] = R[0, 0]
        assert rows["a"] == rows["d"]

    def test_reproducible_accuracy_matrix(self):
        stream = make_stream(11, T=3)
        cfg = TrainConfig(seed=5, variant=variant_ours(), hidden_sizes=(6,))
        R1, _ = train_sequence(stream, cfg)
        R2, _ = train_sequence(stream, cfg)
        assert np.array_equal(R1, R2, equal_nan=True)

    def test_one_update_per_minibatch(self):
        stream = make_stream(12, npc=20, T=2)  # 48 train rows per task
        cfg = TrainConfig(seed=1, variant=variant_single(), bs_new=10, hidden_sizes=(6,))
        _, log = train_sequence(stream, cfg)
        per_task = 48 // 10 + 1  # last partial batch used at natural size
        assert len(log) == 2 * per_task

    def test_directional_improvement_over_plain_sgd(self):
        # small model, five permuted tasks: the decomposed method should
        # retain clearly more accuracy than plain fine-tuning on average
        accs = {"single": [], "ours": []}
        for seed in range(1, 6):
            base = gen_synthetic_base(3, 8, 60, seed=seed)
            stream = gen_permuted_tasks(base, T=5, seed=seed + 1)
            for name, variant in (("single", variant_single()), ("ours", variant_ours())):
                cfg = TrainConfig(seed=seed, variant=variant, hidden_sizes=(12,))
                R, _ = train_sequence(stream, cfg)
                accs[name].append(metrics.acc(R))
        assert np.mean(accs["ours"]) > np.mean(accs["single"])

    def test_replay_split_pools_memories(self):
        stream = make_stream(13, T=3)
        cfg = TrainConfig(
            seed=2,
            variant=variant_ours(),
            hidden_sizes=(6,),
            replay_split_n=3,
            memory_size=8,
        )
        R, log = train_sequence(stream, cfg)
        assert R.shape == (3, 3)
        # from task 2 onward the pooled buffer is split into 3 pseudo-tasks
        late = [t for t in log if t.task == 2 and t.per_layer_alignments is None]
        assert late


class TestVariantEquivalences:
    def test_gem_single_memory_equals_agem_trajectory(self):
        stream = make_stream(14, T=2)
        results = {}
        for letter in ("b", "gem"):
            variant = (
                variant_from_letter("b") if letter == "b" else trainer.variant_gem()
            )
            cfg = TrainConfig(seed=4, variant=variant, hidden_sizes=(6,))
            R, _ = train_sequence(stream, cfg)
            results[letter] = R
        assert np.array_equal(results["b"], results["gem"], equal_nan=True)

    def test_single_segment_layout_matches_concatenated(self):
        # a one-hidden-layer model collapses to... still two segments, so
        # force one segment by comparing per-slice solves on a single-layer
        # linear model
        base = gen_synthetic_base(3, 6, 30, seed=15)
        stream = gen_permuted_tasks(base, T=3, seed=16)
        R = {}
        for lgu in (False, True):
            cfg = TrainConfig(
                seed=6,
                variant=variant_ours(lgu=lgu),
                hidden_sizes=(),  # linear model: exactly one fused segment
            )
            R[lgu], _ = train_sequence(stream, cfg)
        assert np.array_equal(R[False], R[True], equal_nan=True)

    def test_variant_letter_mapping(self):
        assert variant_from_letter("a").kind == "single"
        assert variant_from_letter("b").kind == "agem"
        assert variant_from_letter("c").lgu
        assert variant_from_letter("d").kind == "ours"
        assert variant_from_letter("e", k=2).solver_cfg.relaxation == "pca"
        assert variant_from_letter("f").solver_cfg.mode == "layerwise"
        g = variant_from_letter("g", k=3)
        assert g.solver_cfg.relaxation == "pca" and g.lgu
        with pytest.raises(ValueError):
            variant_from_letter("z")

    def test_inconsistent_lgu_flag_rejected(self):
        from gradecomp.solver import SolverConfig

        with pytest.raises(ValueError, match="disagree"):
            trainer.MethodVariant(
                kind="ours", lgu=True, solver_cfg=SolverConfig()
            )


class TestRunAblation:
    def test_well_formed_table(self):
        stream = make_stream(17, T=2, npc=20)
        cfg = TrainConfig(seed=7, variant=variant_single(), hidden_sizes=(6,))
        variants = [variant_from_letter(letter, k=1) for letter in "abcdefg"]
        rows = trainer.run_ablation(stream, cfg, variants)
        assert len(rows) == 7
        names = [r.name for r in rows]
        assert len(set(names)) == 7
        for row in rows:
            assert 0.0 <= row.acc <= 1.0
            assert row.bwt is not None
            assert row.seconds > 0

    def test_degenerate_two_task_equivalence(self):
        # with a single stored memory the averaged constraint and the
        # decomposed method produce the same metrics
        stream = make_stream(18, T=2)
        cfg = TrainConfig(seed=8, variant=variant_single(), hidden_sizes=(6,))
        rows = trainer.run_ablation(
            stream, cfg, [variant_from_letter("b"), variant_from_letter("d")]
        )
        assert rows[0].acc == rows[1].acc
        assert rows[0].bwt == rows[1].bwt
