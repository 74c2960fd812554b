"""Limiting kernels of the two gradient blocks and their normalised matrices.

``k_a(x, x') = E_b[relu(b.x) relu(b.x')]`` and
``k_b(x, x') = E_b[step(b.x) step(b.x')] <x, x'>`` with ``b`` uniform on the
sphere and ``step(0) = 0``.  On the sphere both have closed forms in the angle
``theta`` between the inputs:

    k_a = (sin(theta) + (pi - theta) cos(theta)) / (2 pi d)
    k_b = cos(theta) (pi - theta) / (2 pi)

The closed forms are certified against the Monte-Carlo estimators in the
test suite.
"""
import json
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._rng import as_rng

__all__ = [
    "MCEstimate",
    "KernelPair",
    "SpectralSummary",
    "EigenvalueError",
    "kernel_a",
    "kernel_b",
    "kernel_matrices",
    "min_eigenvalue",
    "spectral_summary",
    "write_matrix_csv",
    "read_matrix_csv",
]

UNIT_TOL = 1e-9
_CHUNK = 250_000


class MCEstimate(NamedTuple):
    mean: float
    stderr: float


class EigenvalueError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class KernelPair:
    Ka: np.ndarray
    Kb: np.ndarray
    Ka_stderr: Optional[np.ndarray] = None
    Kb_stderr: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.Ka.shape[0]


@dataclass
class SpectralSummary:
    lambda_a: float
    lambda_b: float
    n: int
    d: int
    mode: str = "closed_form"

    @property
    def lambda_n(self):
        return min(self.lambda_a, self.lambda_b)

    @property
    def assumption_holds(self):
        return self.lambda_a > 0 and self.lambda_b > 0

    def to_json(self):
        return json.dumps({"lambda_a": self.lambda_a, "lambda_b": self.lambda_b,
                           "lambda_n": self.lambda_n, "n": self.n, "d": self.d,
                           "mode": self.mode})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["lambda_a"], obj["lambda_b"], obj["n"], obj["d"], obj["mode"])


def _check_unit(*xs):
    for x in xs:
        if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
            raise ValueError("kernel inputs must have unit norm")


def _cos_angle(x, xp):
    return float(np.clip(np.dot(x, xp), -1.0, 1.0))


def _angle(x, xp):
    """Angle between unit vectors, accurate near 0 and pi (arccos is not)."""
    diff = np.linalg.norm(np.asarray(x) - xp, axis=-1)
    summ = np.linalg.norm(np.asarray(x) + xp, axis=-1)
    return 2.0 * np.arctan2(diff, summ)


# Both closed forms take the cosine from the angle and write sin(theta) as
# sin(pi - theta), so identical points give exactly 1/(2d) and 1/2 and
# antipodal points give exactly 0.
def _closed_a(theta, d):
    rest = np.pi - theta
    return (np.sin(rest) + rest * np.cos(theta)) / (2.0 * np.pi) / d


def _closed_b(theta):
    return np.cos(theta) * (np.pi - theta) / (2.0 * np.pi)


def _projection_samples(c, d, size, rng):
    """Sample ``(b.x, b.x')`` for ``b`` uniform on S^{d-1} and ``x.x' = c``.

    Only the two projections enter the integrands, so ``b = g/|g|`` is
    simulated through its first two Gaussian coordinates in an orthonormal
    frame spanned by ``x, x'`` and a chi-square for the remaining ``d - 2``.
    """
    if d == 1:
        s = rng.choice([-1.0, 1.0], size=size)
        return s, s * np.sign(c)
    s = np.sqrt(max(0.0, 1.0 - c * c))
    g1 = rng.standard_normal(size)
    g2 = rng.standard_normal(size)
    r2 = g1 * g1 + g2 * g2
    if d > 2:
        r2 = r2 + rng.chisquare(d - 2, size)
    r = np.sqrt(r2)
    return g1 / r, (c * g1 + s * g2) / r


def _monte_carlo(c, d, n_samples, rng):
    """Joint MC estimates of (k_a, k_b) at cosine ``c``; returns two MCEstimates."""
    sums = np.zeros(2)
    sq = np.zeros(2)
    done = 0
    while done < n_samples:
        size = min(_CHUNK, n_samples - done)
        u, v = _projection_samples(c, d, size, rng)
        fa = np.maximum(u, 0.0) * np.maximum(v, 0.0)
        fb = ((u > 0) & (v > 0)) * c
        sums += fa.sum(), fb.sum()
        sq += (fa * fa).sum(), (fb * fb).sum()
        done += size
    mean = sums / n_samples
    if n_samples > 1:
        var = np.maximum(sq / n_samples - mean ** 2, 0.0) * n_samples / (n_samples - 1)
        se = np.sqrt(var / n_samples)
    else:
        se = np.full(2, np.inf)
    return MCEstimate(mean[0], se[0]), MCEstimate(mean[1], se[1])


def kernel_a(x, xp, mode="closed_form", n_samples=1_000_000, seed=0):
    """``k_a(x, x')``; a float in closed form, an ``MCEstimate`` in Monte-Carlo mode."""
    x, xp = np.asarray(x, float), np.asarray(xp, float)
    _check_unit(x, xp)
    if mode == "closed_form":
        return float(_closed_a(_angle(x, xp), x.shape[0]))
    if mode == "monte_carlo":
        return _monte_carlo(_cos_angle(x, xp), x.shape[0], n_samples, as_rng(seed))[0]
    raise ValueError(f"unknown mode {mode!r}")


def kernel_b(x, xp, mode="closed_form", n_samples=1_000_000, seed=0):
    """``k_b(x, x')``; a float in closed form, an ``MCEstimate`` in Monte-Carlo mode."""
    x, xp = np.asarray(x, float), np.asarray(xp, float)
    _check_unit(x, xp)
    if mode == "closed_form":
        return float(_closed_b(_angle(x, xp)))
    if mode == "monte_carlo":
        return _monte_carlo(_cos_angle(x, xp), x.shape[0], n_samples, as_rng(seed))[1]
    raise ValueError(f"unknown mode {mode!r}")


def kernel_matrices(X, mode="closed_form", n_samples=1_000_000, seed=0):
    """Normalised kernel matrices ``Ka = k_a(x_i, x_j)/n`` and ``Kb = k_b(x_i, x_j)/n``.

    In Monte-Carlo mode every ordered pair ``(i, j)`` gets its own substream
    keyed by ``(seed, i, j)``; off-diagonal entries average the ``(i, j)`` and
    ``(j, i)`` estimates so the result is symmetric and independent of the
    evaluation order.
    """
    X = np.atleast_2d(np.asarray(X, float))
    n, d = X.shape
    if np.any(np.abs(np.linalg.norm(X, axis=1) - 1.0) > UNIT_TOL):
        raise ValueError("kernel inputs must have unit norm")
    C = np.clip(X @ X.T, -1.0, 1.0)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    if mode == "closed_form":
        theta = _angle(X[:, None, :], X[None, :, :])
        theta = 0.5 * (theta + theta.T)
        return KernelPair(_closed_a(theta, d) / n, _closed_b(theta) / n)
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    Ka, Kb = np.zeros((n, n)), np.zeros((n, n))
    Sa, Sb = np.zeros((n, n)), np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ea, eb = _monte_carlo(C[i, j], d, n_samples, as_rng((seed, i, j)))
            if i == j:
                Ka[i, i], Kb[i, i], Sa[i, i], Sb[i, i] = ea.mean, eb.mean, ea.stderr, eb.stderr
                continue
            fa, fb = _monte_carlo(C[i, j], d, n_samples, as_rng((seed, j, i)))
            Ka[i, j] = Ka[j, i] = 0.5 * (ea.mean + fa.mean)
            Kb[i, j] = Kb[j, i] = 0.5 * (eb.mean + fb.mean)
            Sa[i, j] = Sa[j, i] = 0.5 * np.hypot(ea.stderr, fa.stderr)
            Sb[i, j] = Sb[j, i] = 0.5 * np.hypot(eb.stderr, fb.stderr)
    return KernelPair(Ka / n, Kb / n, Sa / n, Sb / n)


def min_eigenvalue(A, tol=1e-10):
    """Smallest eigenvalue of a symmetric matrix.

    Uses the LAPACK symmetric solver, then certifies the eigenpair by its
    residual ``|A v - lam v|``, which must not exceed ``max(tol, 1e3 eps |A|)``.
    """
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-9:
        raise ValueError("matrix is not symmetric within 1e-9")
    A = 0.5 * (A + A.T)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenvalueError(f"eigensolver failed: {exc}") from exc
    lam, v = w[0], V[:, 0]
    residual = float(np.linalg.norm(A @ v - lam * v))
    scale = np.linalg.norm(A, 2) if A.size else 0.0
    if residual > max(tol, 1e3 * np.finfo(float).eps * scale):
        raise EigenvalueError(f"residual {residual:.3e} above tolerance", residual)
    return float(lam)


def spectral_summary(X, mode="closed_form", **kw):
    kp = kernel_matrices(X, mode=mode, **kw)
    X = np.atleast_2d(X)
    return SpectralSummary(min_eigenvalue(kp.Ka), min_eigenvalue(kp.Kb),
                           X.shape[0], X.shape[1], mode)


def write_matrix_csv(path, A):
    A = np.atleast_2d(A)
    with open(path, "w") as fh:
        for row in A:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        return np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
