"""
Network against its random-feature twin
=======================================

Freezing the inner layer at initialization gives a random-feature model
that is linear in the outer weights.  With four neurons it cannot fit a
single-neuron target, while the trained network can.  With a thousand
neurons the two produce the same test-risk curve.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from lazylab.datagen import OneNeuron, make_dataset
from lazylab.dynamics import RunConfig, train_nn, train_rf
from lazylab.models import InitConfig, init_params

n, d = 50, 10
target = OneNeuron.axis(d)
data = make_dataset(target, n, d, (0, 0))
test = make_dataset(target, 5000, d, (0, 1))
cfg = RunConfig(eta=0.01, max_steps=30_000, log_every=300)

fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), sharey=True)
for ax, m in zip(axes, (4, 1000)):
    p0 = init_params(InitConfig(m, d, 0.0, (0, 2)))
    _, nn = train_nn(p0, data, cfg, test=test)
    _, rf = train_rf(p0.a, p0.B, data, cfg, test=test)
    for log, name in ((nn, "network"), (rf, "random features")):
        ax.semilogy(log.column("t"), log.column("train_risk"), label=f"{name}, train")
        ax.semilogy(log.column("t"), log.column("test_risk"), "--", label=f"{name}, test")
    ax.set_title(f"m = {m}")
    ax.set_xlabel("t")
    print(f"m={m:5d}  train risk: network {nn.final['train_risk']:.1e}, "
          f"random features {rf.final['train_risk']:.1e}")
axes[0].legend(fontsize=8)
fig.tight_layout()
fig.savefig("nn_vs_rf.png", dpi=120)
