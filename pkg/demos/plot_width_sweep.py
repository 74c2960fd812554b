"""
Wider is not better without regularization
==========================================

Networks of growing width are trained to interpolate a single-neuron target.
Without a penalty the wide ones end up close to a kernel interpolant and test
worse than the narrow ones.  A path-norm penalty removes the dependence on
width.  The grid here is smaller than the ``width_sweep`` preset so the
script finishes in a few minutes.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from lazylab.datagen import OneNeuron, make_dataset
from lazylab.dynamics import RunConfig, train_nn, train_regularized
from lazylab.models import InitConfig, init_params

n, d = 50, 10
target = OneNeuron.axis(d)
data = make_dataset(target, n, d, (0, 0))
test = make_dataset(target, 5000, d, (0, 1))
widths = [10, 50, 250]
plain, reg = [], []
for m in widths:
    p0 = init_params(InitConfig(m, d, 0.0, (0, 2)))
    _, log = train_nn(p0, data, RunConfig(0.01, 2_000_000, log_every=10_000, stop_risk=1e-5),
                      test=test)
    plain.append(log.final["test_risk"])
    _, log = train_regularized(p0, data, 0.01, RunConfig(0.01, 10 ** 6, log_every=10_000,
                                                         stop_time=2000.0), test=test)
    reg.append(log.final["test_risk"])
    print(f"m={m:4d}  unregularized test {plain[-1]:.2e}  regularized test {reg[-1]:.2e}")

fig, ax = plt.subplots(figsize=(5, 3.8))
ax.loglog(widths, plain, "o-", label="unregularized")
ax.loglog(widths, reg, "s-", label="path-norm penalty 0.01")
ax.set_xlabel("width m")
ax.set_ylabel("test risk")
ax.legend()
fig.tight_layout()
fig.savefig("width_sweep.png", dpi=120)
