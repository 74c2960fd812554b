"""
Limiting kernels of a wide ReLU layer
=====================================

The outer-weight kernel ``k_a`` and the inner-weight kernel ``k_b`` depend on
two inputs only through their angle.  Here the closed forms are drawn against
Monte-Carlo estimates over random features, and the smallest eigenvalues of
the kernel matrices are computed for a random data set.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lazylab.datagen import sample_sphere
from lazylab.kernels import kernel_a, kernel_b, spectral_summary

d = 10
angles = np.linspace(0, np.pi, 25)
x = np.eye(d)[0]
ys = [np.cos(t) * np.eye(d)[0] + np.sin(t) * np.eye(d)[1] for t in angles]

closed_a = [kernel_a(x, y) for y in ys]
closed_b = [kernel_b(x, y) for y in ys]
mc_a = [kernel_a(x, y, "monte_carlo", 100_000, k) for k, y in enumerate(ys)]
mc_b = [kernel_b(x, y, "monte_carlo", 100_000, k) for k, y in enumerate(ys)]

fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
for ax, closed, mc, name in ((axes[0], closed_a, mc_a, "k_a"), (axes[1], closed_b, mc_b, "k_b")):
    ax.plot(angles, closed, label="closed form")
    ax.errorbar(angles, [e.mean for e in mc], yerr=[3 * e.stderr for e in mc], fmt=".",
                label="Monte Carlo, 3 s.e.")
    ax.set_xlabel("angle between inputs")
    ax.set_title(f"{name}, d = {d}")
    ax.legend()
fig.tight_layout()
fig.savefig("kernels.png", dpi=120)

# %%
# The smallest eigenvalues of the normalized kernel matrices set every rate
# and radius in the convergence analysis.  They shrink quickly with ``n``.

for n in (10, 20, 50):
    s = spectral_summary(sample_sphere(n, d, n))
    print(f"n={n:3d}  lambda_a={s.lambda_a:.3e}  lambda_b={s.lambda_b:.3e}")
