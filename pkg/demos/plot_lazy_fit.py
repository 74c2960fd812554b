"""
Fitting random labels from six initial scales
=============================================

A wide two-layer network fits pure noise by gradient descent, whatever the
scale ``beta`` of its initial outer weights.  Each curve stays under the
exponential envelope built from the kernel eigenvalues, and the neurons
barely move.  This is a reduced version of the ``fit_random_labels``
preset (width 2000 instead of 10000).
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lazylab.datagen import RandomLabels, make_dataset
from lazylab.dynamics import RunConfig, stability_threshold, train_nn
from lazylab.kernels import spectral_summary
from lazylab.models import InitConfig, init_params
from lazylab.theory import build_ledger, deviation_bound_check

n, d, m = 30, 30, 2000
data = make_dataset(RandomLabels(), n, d, 0)
spec = spectral_summary(data.inputs)

fig, ax = plt.subplots(figsize=(6, 4))
for e in (-1, -0.5, -0.25, 0, 0.5, 1):
    beta = m ** e
    p0 = init_params(InitConfig(m, d, beta, 1))
    eta = 0.5 * stability_threshold(p0, data.inputs)
    _, log = train_nn(p0, data, RunConfig(eta, 20_000, log_every=20, stop_risk=1e-8))
    ledger = build_ledger(p0, data, spec)
    dev = deviation_bound_check(log, ledger)
    t = np.array(log.column("t"))
    ax.semilogy(t, log.column("train_risk"), label=f"beta = m^{e}")
    print(f"beta=m^{e:<5}  steps={log.final['step']:6d}  final risk={log.final['train_risk']:.1e}"
          f"  max |a-a0|={dev.values['max_a_dev']:.1e} (radius {2 * ledger.p_n:.1e})")
ax.set_xlabel("t = eta * steps")
ax.set_ylabel("training risk")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig("lazy_fit.png", dpi=120)
