"""
Does weight sharing help on clustered patches?
==============================================

Each input is a row of J patches. One patch carries a signal direction tied
to the label; the others are noise. A fully connected net, a locally connected
net with a separate filter bank per location, and the weight-shared net are
trained with the same step size and the same data.
"""

from eoslab import ablation

# a shortened version of the preset so the script runs in under a minute
cfg = ablation.AblationConfig(J=8, m=8, n_train=48, n_test=1024, K=64, epochs=1500, eval_every=250)
for run in ablation.run_ablation(cfg):
    curve = " ".join(f"{c['test_risk']:.3f}" for c in run.record.curve)
    print(f"{run.arch:7s} final train {run.final_train:.4f}  test {run.final_test:.4f}  |  {curve}")
