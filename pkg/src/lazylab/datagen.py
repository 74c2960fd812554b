"""Inputs on the unit sphere and the target-function families.

Inputs are drawn from the uniform law on S^{d-1} by normalising i.i.d.
standard Gaussians.  Three target families are supported:

* ``RandomLabels``: i.i.d. Uniform[-1, 1] labels, no underlying function.
* ``OneNeuron``: ``f*(x) = relu(w . x)`` for a unit direction ``w``.
* ``BarronDensity``: ``f*(x) = E_b[a*(b) relu(b . x)]`` with ``b`` uniform on
  the sphere and ``|a*| <= gamma``.
"""
import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import as_rng

__all__ = [
    "Dataset",
    "RandomLabels",
    "OneNeuron",
    "BarronDensity",
    "LabelClampWarning",
    "sample_sphere",
    "make_labels",
    "make_dataset",
    "barron_values",
    "target_values",
]

UNIT_TOL = 1e-12


class LabelClampWarning(UserWarning):
    """Emitted when Monte-Carlo Barron labels had to be clamped to [-1, 1]."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        norms = np.linalg.norm(self.inputs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("inputs must lie on the unit sphere")
        if np.any(np.abs(self.labels) > 1.0 + 1e-12):
            raise ValueError("labels must satisfy |y| <= 1")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    def to_csv(self, path):
        header = [f"x{j}" for j in range(self.d)] + ["y"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for x, y in zip(self.inputs, self.labels):
                w.writerow([f"{v:.17g}" for v in x] + [f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or header[:-1] != [f"x{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"unexpected dataset header {header!r}")
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True)
class RandomLabels:
    """Labels drawn uniformly from [-1, 1]; there is no population target."""


@dataclass(frozen=True)
class OneNeuron:
    direction: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.direction, dtype=float).reshape(-1)
        if abs(np.linalg.norm(w) - 1.0) > UNIT_TOL:
            raise ValueError("OneNeuron direction must have unit norm")
        object.__setattr__(self, "direction", w)

    @classmethod
    def axis(cls, d, k=0):
        w = np.zeros(d)
        w[k] = 1.0
        return cls(w)

    def __call__(self, X):
        return np.maximum(np.atleast_2d(X) @ self.direction, 0.0)


@dataclass(frozen=True)
class BarronDensity:
    """Target with integral representation over uniform sphere features.

    ``coef`` maps an ``(M, d)`` array of unit vectors to ``M`` coefficients.
    ``exact`` optionally evaluates ``f*`` in closed form; it is used for
    population risk when given, and Monte-Carlo quadrature otherwise.
    """

    coef: Callable[[np.ndarray], np.ndarray]
    gamma: float
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.gamma >= 1.0:
            raise ValueError("gamma must be >= 1")

    @classmethod
    def constant(cls, c, gamma=None):
        """``a*(b) = c``; then ``f*(x) = c E[relu(b_1)]`` is constant on the sphere."""
        gamma = max(1.0, abs(c)) if gamma is None else gamma

        def coef(b):
            return np.full(b.shape[0], float(c))

        def exact(X):
            X = np.atleast_2d(X)
            return np.full(X.shape[0], c * _mean_relu_coordinate(X.shape[1]))

        return cls(coef, gamma, exact)

    @classmethod
    def linear(cls, w, scale, offset=0.0):
        """``a*(b) = offset + scale * (w . b)``.

        The target is ``f*(x) = offset * E[relu(b_1)] + scale * (w . x) / (2d)``.
        """
        w = np.asarray(w, dtype=float)
        w = w / np.linalg.norm(w)
        gamma = max(1.0, abs(offset) + abs(scale))

        def coef(b):
            return offset + scale * (b @ w)

        def exact(X):
            X = np.atleast_2d(X)
            d = X.shape[1]
            return offset * _mean_relu_coordinate(d) + scale * (X @ w) / (2.0 * d)

        return cls(coef, gamma, exact)


def _mean_relu_coordinate(d):
    """E[relu(b_1)] for b uniform on S^{d-1}."""
    from math import exp, lgamma, pi, sqrt

    if d == 1:
        return 0.5
    return 0.5 * exp(lgamma(d / 2) - lgamma((d + 1) / 2)) / sqrt(pi)


def sample_sphere(n, d, seed):
    """Draw ``n`` points uniformly from S^{d-1}, one per row."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if n < 0:
        raise ValueError("count must be >= 0")
    rng = as_rng(seed)
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    # zero rows have probability 0; redraw them rather than divide by zero
    while np.any(norms == 0.0):
        bad = norms == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def barron_values(target, X, quadrature_size, seed):
    """Monte-Carlo estimate of ``f*(x)`` at each row of ``X`` and its standard error."""
    if quadrature_size < 1:
        raise ValueError("quadrature_size must be >= 1")
    X = np.atleast_2d(X)
    rng = as_rng(seed)
    b = sample_sphere(quadrature_size, X.shape[1], rng)
    coef = np.asarray(target.coef(b), dtype=float)
    if np.max(np.abs(coef)) > target.gamma:
        raise ValueError(
            f"sampled |a*(b)| = {np.max(np.abs(coef)):.6g} exceeds gamma = {target.gamma}")
    terms = coef[:, None] * np.maximum(b @ X.T, 0.0)
    mean = terms.mean(axis=0)
    if quadrature_size > 1:
        stderr = terms.std(axis=0, ddof=1) / np.sqrt(quadrature_size)
    else:
        stderr = np.full(X.shape[0], np.inf)
    return mean, stderr


def make_labels(target, inputs, seed, quadrature_size=10_000):
    """Labels for ``inputs`` under ``target``.

    Barron labels are clamped into [-1, 1] only when an estimate leaves that
    interval, in which case a ``LabelClampWarning`` is issued.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if isinstance(target, RandomLabels):
        return as_rng(seed).uniform(-1.0, 1.0, size=X.shape[0])
    if isinstance(target, OneNeuron):
        return target(X)
    if isinstance(target, BarronDensity):
        y, _ = barron_values(target, X, quadrature_size, seed)
        over = np.abs(y) > 1.0
        if np.any(over):
            warnings.warn(f"{int(over.sum())} Barron labels clamped to [-1, 1]",
                          LabelClampWarning, stacklevel=2)
            y = np.clip(y, -1.0, 1.0)
        return y
    raise TypeError(f"unknown target {target!r}")


def target_values(target, X, seed=0, quadrature_size=100_000):
    """Noise-free target values, used to build test sets."""
    if isinstance(target, RandomLabels):
        raise ValueError("random labels have no population target")
    if isinstance(target, BarronDensity) and target.exact is not None:
        return np.asarray(target.exact(np.atleast_2d(X)), dtype=float)
    return make_labels(target, X, seed, quadrature_size)


def make_dataset(target, n, d, seed, quadrature_size=10_000):
    """Sample inputs and label them; input and label streams are independent substreams."""
    X = sample_sphere(n, d, (seed, 0))
    return Dataset(X, make_labels(target, X, (seed, 1), quadrature_size))
