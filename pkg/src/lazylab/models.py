"""Two-layer ReLU networks ``f(x) = a . relu(B x)`` and the random-feature variant.

Training risk always carries the ``1/(2n)`` factor.  The unhalved population
quantity used for the generalization bounds lives in :mod:`lazylab.theory`.
"""
import json
from dataclasses import dataclass

import numpy as np

from ._rng import as_rng
from .datagen import RandomLabels, sample_sphere, target_values

__all__ = [
    "NetParams",
    "InitConfig",
    "relu",
    "relu_grad",
    "init_params",
    "forward",
    "rf_forward",
    "residuals",
    "empirical_risk",
    "population_risk_mc",
    "gradient",
    "path_norm",
    "param_deviation",
]


def relu(t):
    return np.maximum(t, 0.0)


def relu_grad(t):
    # subgradient convention: relu'(0) = 0
    return (np.asarray(t) > 0).astype(float)


@dataclass
class NetParams:
    a: np.ndarray
    B: np.ndarray
    beta: float = float("nan")

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if self.B.shape[0] != self.a.shape[0]:
            raise ValueError(f"a has {self.a.shape[0]} entries but B has {self.B.shape[0]} rows")

    @property
    def m(self):
        return self.a.shape[0]

    @property
    def d(self):
        return self.B.shape[1]

    def copy(self):
        return NetParams(self.a.copy(), self.B.copy(), self.beta)

    def flat(self):
        return np.concatenate([self.a, self.B.ravel()])

    @classmethod
    def from_flat(cls, v, m, d, beta=float("nan")):
        return cls(v[:m].copy(), v[m:].reshape(m, d).copy(), beta)

    def to_json(self):
        # json uses repr() for floats, which round-trips exactly
        return json.dumps({"m": self.m, "d": self.d, "beta": self.beta,
                           "a": self.a.tolist(), "B": self.B.tolist()})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        p = cls(np.array(obj["a"], float), np.array(obj["B"], float).reshape(obj["m"], obj["d"]),
                float(obj["beta"]))
        return p


@dataclass(frozen=True)
class InitConfig:
    m: int
    d: int
    beta: float
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("width must be >= 1")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")


def init_params(cfg):
    """Rademacher outer weights of magnitude ``beta``, inner rows uniform on the sphere."""
    B = sample_sphere(cfg.m, cfg.d, (cfg.seed, 0))
    signs = as_rng((cfg.seed, 1)).choice(np.array([-1.0, 1.0]), size=cfg.m)
    return NetParams(cfg.beta * signs, B, float(cfg.beta))


def _features(B, X):
    return relu(np.atleast_2d(X) @ B.T)


def forward(params, x):
    """Network output at one input (scalar) or at each row of a batch (vector)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.d:
        raise ValueError(f"input dimension {x.shape[-1]} != {params.d}")
    out = _features(params.B, x) @ params.a
    return float(out[0]) if x.ndim == 1 else out


def rf_forward(a_tilde, B0, x):
    """Random-feature model: same form as :func:`forward` with ``B0`` frozen."""
    return forward(NetParams(a_tilde, B0), x)


def _xy(data):
    return data.inputs, data.labels


def residuals(params, data):
    X, y = _xy(data)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return forward(params, X) - y


def empirical_risk(params, data):
    e = residuals(params, data)
    return float(e @ e) / (2 * e.shape[0])


def population_risk_mc(params, target, n_test, seed):
    """Half mean-squared error on ``n_test`` fresh inputs; returns ``(risk, stderr)``."""
    if isinstance(target, RandomLabels):
        raise ValueError("random labels have no population target")
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    X = sample_sphere(n_test, params.d, (seed, 0))
    y = target_values(target, X, (seed, 1))
    sq = 0.5 * (forward(params, X) - y) ** 2
    se = sq.std(ddof=1) / np.sqrt(n_test) if n_test > 1 else float("inf")
    return float(sq.mean()), float(se)


def gradient(params, data):
    """Exact gradient of the training risk, returned as a ``NetParams``."""
    X, y = _xy(data)
    if X.shape[1] != params.d:
        raise ValueError(f"input dimension {X.shape[1]} != {params.d}")
    n = X.shape[0]
    Z = X @ params.B.T                      # (n, m) pre-activations
    e = relu(Z) @ params.a - y
    grad_a = relu(Z).T @ e / n
    grad_B = params.a[:, None] * ((relu_grad(Z) * e[:, None]).T @ X) / n
    return NetParams(grad_a, grad_B, params.beta)


def path_norm(params):
    return float(np.sum(np.abs(params.a) * np.linalg.norm(params.B, axis=1)))


def param_deviation(current, initial):
    """``(max_k |a_k - a_k(0)|, max_k |b_k - b_k(0)|)``."""
    if current.a.shape != initial.a.shape or current.B.shape != initial.B.shape:
        raise ValueError("parameter shapes differ")
    da = np.max(np.abs(current.a - initial.a), initial=0.0)
    db = np.max(np.linalg.norm(current.B - initial.B, axis=1), initial=0.0)
    return float(da), float(db)
