"""Explicit-Euler gradient descent for the network, random-feature and path-norm flows.

A step of size ``eta`` advances continuous time by ``eta``; every log record
carries ``t = eta * step`` so bounds stated in continuous time apply directly.
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import NetParams, relu, relu_grad
from .theory import gram_matrices, lyapunov_J

__all__ = [
    "RunConfig",
    "TrajectoryLog",
    "TrainingDiverged",
    "CSV_COLUMNS",
    "stability_threshold",
    "train_nn",
    "train_rf",
    "train_regularized",
    "coupled_run",
    "default_probes",
]

CSV_COLUMNS = ("step", "t", "train_risk", "test_risk", "max_a_dev", "max_b_dev",
               "path_norm", "gram_drift", "sup_gap")
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class RunConfig:
    eta: float
    max_steps: int
    log_every: int = 1
    stop_risk: Optional[float] = None
    stop_time: Optional[float] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_steps < 1 or self.log_every < 1:
            raise ValueError("max_steps and log_every must be >= 1")


class TrainingDiverged(RuntimeError):
    """Raised when the risk becomes non-finite or grows by more than 1e6 over its initial value."""

    def __init__(self, msg, log):
        super().__init__(msg)
        self.log = log


class TrajectoryLog:
    """Column store of logged quantities.

    Columns listed in ``CSV_COLUMNS`` are written to CSV; anything else
    (objective values, probe outputs, Lyapunov values) stays in memory.
    """

    def __init__(self, eta=None):
        self.eta = eta
        self.records = []
        self.status = "running"
        self.stability_eta = None
        self.risk_increases = []
        self.extras = {}

    def append(self, **fields):
        self.records.append(fields)

    def column(self, name):
        return [r.get(name) for r in self.records]

    def __len__(self):
        return len(self.records)

    @property
    def final(self):
        return self.records[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            for row in rd:
                rec = {}
                for k, v in row.items():
                    if v == "":
                        continue
                    rec[k] = int(v) if k == "step" else float(v)
                log.records.append(rec)
        log.status = "loaded"
        return log


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def default_probes(data, extra=100, seed=0):
    """Training inputs plus ``extra`` fresh sphere samples."""
    from .datagen import sample_sphere

    return np.vstack([data.inputs, sample_sphere(extra, data.d, (seed, 7))])


def stability_threshold(params, X):
    """``2 / (m lambda_max(G))``: the step size limit of the linearised flow at ``params``."""
    G = gram_matrices(params, X).G
    lam = np.linalg.eigvalsh(G)[-1]
    return 2.0 / (params.m * lam) if lam > 0 else math.inf


def _stop(cfg, step, risk):
    if cfg.stop_risk is not None and risk <= cfg.stop_risk:
        return True
    if cfg.stop_time is not None and cfg.eta * step >= cfg.stop_time * (1 - 1e-12):
        return True
    return step >= cfg.max_steps


def _diverged(risk, R0):
    return not math.isfinite(risk) or risk > DIVERGENCE_FACTOR * max(1.0, R0)


def _track_monotone(log, risk, prev, step, eta):
    if prev is not None and risk > prev and eta < log.stability_eta:
        log.risk_increases.append(step)


def _half_mse(pred, y):
    e = pred - y
    return float(e @ e) / (2 * len(e))


def train_nn(params0, data, cfg, *, test=None, probes=None, track_gram=False):
    """Gradient descent on both layers.

    ``test`` is an optional held-out ``Dataset``; ``probes`` an optional array
    of inputs whose outputs are stored in ``log.extras["probe_values"]``.
    """
    return _train_net(params0, data, cfg, 0.0, test, probes, track_gram)


def train_regularized(params0, data, lam, cfg, *, test=None, probes=None, track_gram=False):
    """Subgradient descent on ``risk + lam sqrt(ln d / n) * path_norm``."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam > 0 and params0.d < 2:
        raise ValueError("the penalty needs d >= 2")
    coef = lam * math.sqrt(math.log(params0.d) / data.n) if lam > 0 else 0.0
    return _train_net(params0, data, cfg, coef, test, probes, track_gram)


class _NetWorkspace:
    """Reusable ``n x m`` buffers for the network step; the hot loop allocates nothing large."""

    def __init__(self, n, m):
        self.Z = np.empty((n, m))
        self.S = np.empty((n, m))

    def forward(self, X, B, a, y):
        np.matmul(X, B.T, out=self.Z)
        F = np.maximum(self.Z, 0.0, out=self.Z)
        return F, F @ a - y

    def grads(self, X, F, e, a):
        n = X.shape[0]
        ga = e @ F / n
        # sign(relu(z)) is the relu derivative with relu'(0) = 0
        S = np.sign(F, out=self.S)
        S *= e[:, None]
        gB = S.T @ X
        gB *= (a / n)[:, None]
        return ga, gB


def _train_net(params0, data, cfg, penalty, test, probes, track_gram):
    X, y = data.inputs, data.labels
    n = X.shape[0]
    a, B = params0.a.copy(), params0.B.copy()
    ws = _NetWorkspace(n, params0.m)
    log = TrajectoryLog(cfg.eta)
    log.stability_eta = stability_threshold(params0, X)
    G0 = gram_matrices(params0, X).G if track_gram else None
    probe_vals = []
    R0 = prev = None
    step = 0
    while True:
        F, e = ws.forward(X, B, a, y)
        risk = float(e @ e) / (2 * n)
        if R0 is None:
            R0 = risk
        done = _stop(cfg, step, risk)
        diverged = _diverged(risk, R0)
        logging = step % cfg.log_every == 0 or done or diverged
        if penalty or logging:
            bnorm = np.linalg.norm(B, axis=1)
            pn = float(np.abs(a) @ bnorm)
        if logging:
            cur = NetParams(a, B, params0.beta)
            rec = dict(step=step, t=cfg.eta * step, train_risk=risk,
                       max_a_dev=float(np.max(np.abs(a - params0.a))),
                       max_b_dev=float(np.max(np.linalg.norm(B - params0.B, axis=1))),
                       path_norm=pn, objective=risk + penalty * pn)
            if test is not None:
                rec["test_risk"] = _half_mse(relu(test.inputs @ B.T) @ a, test.labels)
            if track_gram:
                rec["gram_drift"] = float(np.linalg.norm(gram_matrices(cur, X).G - G0))
            if probes is not None:
                probe_vals.append(relu(probes @ B.T) @ a)
            log.append(**rec)
            _track_monotone(log, risk, prev, step, cfg.eta)
            prev = risk
        if diverged:
            log.status = "diverged"
            log.extras["probe_values"] = np.array(probe_vals)
            raise TrainingDiverged(f"risk {risk:.3e} at step {step}", log)
        if done:
            break
        grad_a, grad_B = ws.grads(X, F, e, a)
        if penalty:
            safe = np.where(bnorm > 0, bnorm, 1.0)
            grad_a = grad_a + penalty * np.sign(a) * bnorm
            grad_B = grad_B + penalty * (np.abs(a) / safe * (bnorm > 0))[:, None] * B
        a = a - cfg.eta * grad_a
        B = B - cfg.eta * grad_B
        step += 1
    log.status = _status(cfg, log)
    if probes is not None:
        log.extras["probe_values"] = np.array(probe_vals)
    return NetParams(a, B, params0.beta), log


def _status(cfg, log):
    if cfg.stop_risk is not None and log.final["train_risk"] > cfg.stop_risk:
        if cfg.stop_time is None or log.final["t"] < cfg.stop_time * (1 - 1e-12):
            return "budget-exhausted"
    return "ok"


def train_rf(a0, B0, data, cfg, *, test=None, probes=None, comparator=None):
    """Gradient descent on the outer weights with the inner layer frozen at ``B0``.

    ``log.extras["residual_integral"]`` holds ``-m * eta * sum_s e(s)``, the
    weights of the kernel expansion of ``f(t) - f(0)``.  With ``comparator``
    set, the Lyapunov value against that fixed ``a*`` is logged as ``lyapunov``.
    """
    X, y = data.inputs, data.labels
    B0 = np.atleast_2d(B0)
    n, m = X.shape[0], B0.shape[0]
    Phi = relu(X @ B0.T)
    Phi_test = relu(test.inputs @ B0.T) if test is not None else None
    Phi_probe = relu(probes @ B0.T) if probes is not None else None
    a0 = np.asarray(a0, float)
    a = a0.copy()
    bnorm = np.linalg.norm(B0, axis=1)
    log = TrajectoryLog(cfg.eta)
    # nonzero spectra of Phi^T Phi and Phi Phi^T coincide; use the smaller one
    small = Phi.T @ Phi if m <= n else Phi @ Phi.T
    lam_max = np.linalg.eigvalsh(small / n)[-1]
    log.stability_eta = 2.0 / lam_max if lam_max > 0 else math.inf
    if comparator is not None:
        comparator = np.asarray(comparator, float)
        risk_star = _half_mse(Phi @ comparator, y)
    w = np.zeros(n)
    probe_vals = []
    R0 = prev = None
    step = 0
    while True:
        e = Phi @ a - y
        risk = float(e @ e) / (2 * n)
        if R0 is None:
            R0 = risk
        done = _stop(cfg, step, risk)
        diverged = _diverged(risk, R0)
        if step % cfg.log_every == 0 or done or diverged:
            rec = dict(step=step, t=cfg.eta * step, train_risk=risk,
                       max_a_dev=float(np.max(np.abs(a - a0))), max_b_dev=0.0,
                       path_norm=float(np.abs(a) @ bnorm))
            if Phi_test is not None:
                rec["test_risk"] = _half_mse(Phi_test @ a, test.labels)
            if comparator is not None:
                rec["lyapunov"] = lyapunov_J(a, comparator, risk, risk_star, cfg.eta * step)
            if Phi_probe is not None:
                probe_vals.append(Phi_probe @ a)
            log.append(**rec)
            _track_monotone(log, risk, prev, step, cfg.eta)
            prev = risk
        if diverged:
            log.status = "diverged"
            raise TrainingDiverged(f"risk {risk:.3e} at step {step}", log)
        if done:
            break
        w -= m * cfg.eta * e
        a = a - cfg.eta * (Phi.T @ e) / n
        step += 1
    log.status = _status(cfg, log)
    log.extras["residual_integral"] = w
    if probes is not None:
        log.extras["probe_values"] = np.array(probe_vals)
    return a, log


def coupled_run(params0, data, cfg, probes=None):
    """Run the network and its random-feature twin in lockstep from the same initial function.

    Returns ``(log_nn, log_rf, gap)`` where ``gap`` is an array of rows
    ``(t, sup |f_nn - f_rf|)`` over the probe set joined with the training
    inputs.  Stopping rules are evaluated on the network's risk.
    """
    X, y = data.inputs, data.labels
    n = X.shape[0]
    P = X if probes is None else np.vstack([X, np.atleast_2d(probes)])
    a, B = params0.a.copy(), params0.B.copy()
    B0 = params0.B
    a_rf = params0.a.copy()
    Phi = relu(X @ B0.T)
    Phi_P = relu(P @ B0.T)
    log_nn, log_rf = TrajectoryLog(cfg.eta), TrajectoryLog(cfg.eta)
    log_nn.stability_eta = log_rf.stability_eta = stability_threshold(params0, X)
    gaps = []
    R0 = None
    step = 0
    while True:
        Z = X @ B.T
        F = relu(Z)
        e = F @ a - y
        e_rf = Phi @ a_rf - y
        risk = float(e @ e) / (2 * n)
        risk_rf = float(e_rf @ e_rf) / (2 * n)
        if R0 is None:
            R0 = max(risk, risk_rf)
        done = _stop(cfg, step, risk)
        diverged = _diverged(risk, R0) or _diverged(risk_rf, R0)
        if step % cfg.log_every == 0 or done or diverged:
            t = cfg.eta * step
            gap = float(np.max(np.abs(relu(P @ B.T) @ a - Phi_P @ a_rf)))
            gaps.append((t, gap))
            log_nn.append(step=step, t=t, train_risk=risk,
                          max_a_dev=float(np.max(np.abs(a - params0.a))),
                          max_b_dev=float(np.max(np.linalg.norm(B - B0, axis=1))),
                          path_norm=float(np.abs(a) @ np.linalg.norm(B, axis=1)), sup_gap=gap)
            log_rf.append(step=step, t=t, train_risk=risk_rf,
                          max_a_dev=float(np.max(np.abs(a_rf - params0.a))), max_b_dev=0.0,
                          path_norm=float(np.abs(a_rf) @ np.linalg.norm(B0, axis=1)), sup_gap=gap)
        if diverged:
            log_nn.status = log_rf.status = "diverged"
            raise TrainingDiverged(f"coupled run diverged at step {step}", log_nn)
        if done:
            break
        grad_a = F.T @ e / n
        grad_B = a[:, None] * ((relu_grad(Z) * e[:, None]).T @ X) / n
        a = a - cfg.eta * grad_a
        B = B - cfg.eta * grad_B
        a_rf = a_rf - cfg.eta * (Phi.T @ e_rf) / n
        step += 1
    log_nn.status = log_rf.status = _status(cfg, log_nn)
    return log_nn, log_rf, np.array(gaps)
