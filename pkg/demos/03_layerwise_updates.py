"""Per-layer solves and first-order loss-change bookkeeping.

Run:  python demos/03_layerwise_updates.py

Gradient magnitudes differ strongly across the layers of a network, so a
single concatenated inner product is dominated by whichever layer is
loudest.  Solving per layer lets every layer take its own branch.  The
demo measures the per-layer gradient norms of a real model, runs both
modes, and compares their predicted replay-loss changes.
"""

import numpy as np

from gradecomp import MlpModel, decompose, layerwise_solve, predicted_loss_change
from gradecomp.model import Batch
from gradecomp.solver import MODE_CONCATENATED, MODE_LAYERWISE, SolverConfig

rng = np.random.default_rng(21)

model = MlpModel([16, 40, 20, 4], seed=5)
batches = [
    Batch(rng.standard_normal((16, 16)) * 2, rng.integers(0, 4, size=16))
    for _ in range(4)
]
new_batch = Batch(rng.standard_normal((12, 16)) * 2, rng.integers(0, 4, size=12))

_, g = model.loss_and_grad(new_batch)
old = [model.loss_and_grad(b)[1] for b in batches]
bundle = decompose(g, old)

print("per-layer gradient magnitudes of the new-task gradient:")
for seg, sl in zip(model.layout.segments, model.layout.slices()):
    print(f"  {seg.name:>8}: |g| = {np.linalg.norm(g[sl]):.4f} "
          f"({seg.length} parameters)")

result = layerwise_solve(bundle, model.layout, SolverConfig())
print("\nper-layer solves:")
for name, res in result.per_layer:
    print(f"  {name:>8}: branch = {res.branch:<19} "
          f"alignment = {res.shared_alignment:+.5f}")

for mode in (MODE_CONCATENATED, MODE_LAYERWISE):
    report = predicted_loss_change(bundle, result.w, model.layout, mode)
    contributing = sum(e.contributes for e in report.per_layer)
    print(f"\n{mode} prediction: {report.predicted_delta:+.5f} per unit step "
          f"({contributing}/{len(report.per_layer)} segments contribute)")
    for entry in report.per_layer:
        flag = "+" if entry.contributes else " "
        print(f"  [{flag}] {entry.name:>8}: alignment {entry.alignment:+.5f}")

print("\nMultiply by the learning rate to predict the replay-loss change of")
print("the next step; the trainer logs these alignments every iteration.")
