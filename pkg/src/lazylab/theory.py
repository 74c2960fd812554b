"""Executable versions of the convergence, coupling and generalization bounds.

Every bound is a plain function of its inputs.  Checks against trajectories
return :class:`CheckReport` objects that serialize to the JSON report format
``{claim_id, paper_ref, values, threshold, pass, trials, failures}``.

Two confidence constants coexist and are never merged:

* ``c_init(delta) = 2 + sqrt(ln(1/delta))``, for the initial-risk bound and
  the parameter-deviation estimates;
* ``c_coupling(delta) = 1 + sqrt(ln(1/delta))``, for the network/random-feature
  coupling estimate.

Constants that are only known up to absolute factors default to 1 and are
used for trend checks only.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import make_dataset, sample_sphere, target_values
from .kernels import min_eigenvalue, spectral_summary
from .models import InitConfig, empirical_risk, gradient, init_params, relu, relu_grad, residuals

__all__ = [
    "GramPair",
    "TheoryLedger",
    "CheckReport",
    "c_init",
    "c_coupling",
    "gram_matrices",
    "gradient_norm_identity_check",
    "pq_bounds",
    "decay_envelope",
    "init_risk_bound",
    "regime_estimates",
    "build_ledger",
    "deviation_bound_check",
    "envelope_check",
    "gram_drift",
    "neighborhood_radius",
    "exit_time",
    "neighborhood_check",
    "gram_init_bound",
    "gram_init_width",
    "coupling_bound",
    "a_star_construct",
    "l2_population_risk",
    "a_star_risk_bound",
    "rad_gen_bound",
    "early_stop_bound",
    "schedule_from_corollary",
    "lyapunov_J",
    "kernel_expansion",
    "binomial_allowance",
    "frequency_report",
    "init_gram",
    "init_risk_frequency",
    "gram_init_frequency",
    "a_star_frequency",
    "rad_gen_frequency",
]


def c_init(delta):
    return 2.0 + math.sqrt(math.log(1.0 / delta))


def c_coupling(delta):
    return 1.0 + math.sqrt(math.log(1.0 / delta))


@dataclass
class GramPair:
    Ga: np.ndarray
    Gb: np.ndarray

    @property
    def G(self):
        return self.Ga + self.Gb


def gram_matrices(params, inputs, chunk=200_000):
    """Finite-width Gram matrices of the outer- and inner-weight gradient blocks.

    Neurons are processed in fixed-size chunks, so very wide networks fit in
    memory and the reduction order does not depend on the machine.
    """
    X = np.atleast_2d(inputs)
    if X.shape[1] != params.d:
        raise ValueError(f"input dimension {X.shape[1]} != {params.d}")
    n, m = X.shape[0], params.m
    Ga = np.zeros((n, n))
    Sb = np.zeros((n, n))
    for lo in range(0, m, chunk):
        Z = X @ params.B[lo:lo + chunk].T
        F = relu(Z)
        D = relu_grad(Z) * np.abs(params.a[lo:lo + chunk])
        Ga += F @ F.T
        Sb += D @ D.T
    Ga /= n * m
    Gb = Sb * (X @ X.T) / (n * m)
    return GramPair(0.5 * (Ga + Ga.T), 0.5 * (Gb + Gb.T))


def gradient_norm_identity_check(params, data):
    """Return ``(|grad|_F^2, (m/n) e^T G e)``; the two sides are computed independently."""
    g = gradient(params, data)
    lhs = float(g.a @ g.a + np.sum(g.B * g.B))
    e = residuals(params, data)
    gp = gram_matrices(params, data.inputs)
    rhs = float(params.m / data.n * (e @ gp.G @ e))
    return lhs, rhs


def pq_bounds(R0, m, lambda_a, lambda_b, beta):
    """A-priori deviation radii.

    ``p = 4 sqrt(R0) / (m (la + beta^2 lb))`` and ``q = p^2 + beta p``.
    """
    if R0 < 0:
        raise ValueError("R0 must be >= 0")
    rate = lambda_a + beta ** 2 * lambda_b
    if rate <= 0:
        raise ValueError("lambda_a + beta^2 lambda_b must be positive")
    p = 4.0 * math.sqrt(R0) / (m * rate)
    return p, p * p + beta * p


def decay_envelope(R0, m, lambda_a, lambda_b, beta, t):
    """Exponential risk envelope ``exp(-m (la + beta^2 lb) t) R0``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return R0 * math.exp(-m * (lambda_a + beta ** 2 * lambda_b) * t)


def init_risk_bound(m, beta, delta):
    return 0.5 * (1.0 + c_init(delta) * math.sqrt(m) * beta) ** 2


def regime_estimates(m, lambda_a, lambda_b, beta, delta):
    """Order-of-magnitude estimates of ``p`` and ``q`` in the small/large ``beta`` regimes."""
    C = 10.0 * c_init(delta) ** 2
    sm = math.sqrt(m)
    if beta <= 1:
        p = C / (sm * lambda_a) * (1.0 / sm + beta)
        q = (C / (m * lambda_a ** 2) * (1.0 / m + 2 * beta / sm + beta ** 2)
             + C * beta / (m * lambda_a) + C * beta ** 2 / (sm * lambda_a))
    else:
        p = C / math.sqrt(m * lambda_a * lambda_b)
        q = C / (sm * lambda_b)
    return {"regime": "beta<=1" if beta <= 1 else "beta>1", "C_delta": C, "p_est": p, "q_est": q}


@dataclass
class TheoryLedger:
    lambda_a: float
    lambda_b: float
    beta: float
    m: int
    n: int
    R0: float
    delta: float = 0.1
    bound_constant: float = 1.0
    p_n: float = field(init=False)
    q_n: float = field(init=False)

    def __post_init__(self):
        self.p_n, self.q_n = pq_bounds(self.R0, self.m, self.lambda_a, self.lambda_b, self.beta)

    @property
    def lambda_n(self):
        return min(self.lambda_a, self.lambda_b)

    @property
    def rate(self):
        return self.m * (self.lambda_a + self.beta ** 2 * self.lambda_b)

    @property
    def c_delta_init(self):
        return c_init(self.delta)

    @property
    def c_delta_coupling(self):
        return c_coupling(self.delta)

    @property
    def C_delta(self):
        return 10.0 * self.c_delta_init ** 2

    def envelope(self, t):
        return decay_envelope(self.R0, self.m, self.lambda_a, self.lambda_b, self.beta, t)

    def to_dict(self):
        out = asdict(self)
        out.update(lambda_n=self.lambda_n, rate=self.rate, c_delta_init=self.c_delta_init,
                   c_delta_coupling=self.c_delta_coupling, C_delta=self.C_delta)
        return out


def build_ledger(params0, data, spectral, delta=0.1):
    return TheoryLedger(spectral.lambda_a, spectral.lambda_b, float(params0.beta),
                        params0.m, data.n, empirical_risk(params0, data), delta)


@dataclass
class CheckReport:
    claim_id: str
    paper_ref: str
    values: dict
    threshold: object
    passed: bool
    trials: int = 1
    failures: int = 0

    def to_dict(self):
        return {"claim_id": self.claim_id, "paper_ref": self.paper_ref,
                "values": _jsonable(self.values), "threshold": _jsonable(self.threshold),
                "pass": bool(self.passed), "trials": int(self.trials),
                "failures": int(self.failures)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def deviation_bound_check(log, ledger):
    """Flag logged steps where the outer/inner weights moved beyond ``2p`` / ``2q``."""
    da = np.asarray(log.column("max_a_dev"), float)
    db = np.asarray(log.column("max_b_dev"), float)
    flags_a = np.flatnonzero(da > 2 * ledger.p_n)
    flags_b = np.flatnonzero(db > 2 * ledger.q_n)
    steps = np.asarray(log.column("step"))
    flagged = sorted(set(steps[flags_a].tolist()) | set(steps[flags_b].tolist()))
    est = regime_estimates(ledger.m, ledger.lambda_a, ledger.lambda_b, ledger.beta, ledger.delta)
    values = {"max_a_dev": float(da.max(initial=0.0)), "max_b_dev": float(db.max(initial=0.0)),
              "p_n": ledger.p_n, "q_n": ledger.q_n, "flagged_steps": flagged,
              "regime_estimates": est,
              "p_within_estimate": ledger.p_n <= est["p_est"],
              "q_within_estimate": ledger.q_n <= est["q_est"]}
    return CheckReport("parameter_deviation", "deviation radii 2p_n / 2q_n", values,
                       {"a": 2 * ledger.p_n, "b": 2 * ledger.q_n}, not flagged,
                       trials=len(da), failures=len(flagged))


def envelope_check(log, ledger, slack=0.0):
    """Logged training risk against the exponential envelope, with relative ``slack``."""
    t = np.asarray(log.column("t"), float)
    r = np.asarray(log.column("train_risk"), float)
    env = ledger.R0 * np.exp(-ledger.rate * t)
    bad = np.flatnonzero(r > env * (1.0 + slack))
    worst = float(np.max(r / env)) if len(r) else 0.0
    return CheckReport("risk_envelope", "exponential decay of the training risk",
                       {"worst_ratio": worst, "flagged_steps": np.asarray(log.column("step"))[bad]},
                       {"slack": slack}, len(bad) == 0, trials=len(r), failures=len(bad))


def gram_drift(params_t, params_0, inputs):
    """Frobenius distance ``|G(theta_t) - G(theta_0)|_F``."""
    return float(np.linalg.norm(gram_matrices(params_t, inputs).G
                                - gram_matrices(params_0, inputs).G))


def neighborhood_radius(ledger):
    return 0.25 * (ledger.lambda_a + ledger.beta ** 2 * ledger.lambda_b)


def exit_time(log, ledger):
    """First logged time with Gram drift outside the neighborhood; ``inf`` if none."""
    drift = np.asarray(log.column("gram_drift"), float)
    t = np.asarray(log.column("t"), float)
    out = np.flatnonzero(drift > neighborhood_radius(ledger))
    return float(t[out[0]]) if len(out) else math.inf


def neighborhood_check(log, ledger):
    drift = np.asarray(log.column("gram_drift"), float)
    t0 = exit_time(log, ledger)
    return CheckReport("gram_neighborhood", "Gram drift neighborhood, exit time",
                       {"max_drift": float(np.nanmax(drift)), "exit_time": t0},
                       neighborhood_radius(ledger), math.isinf(t0), trials=len(drift),
                       failures=int(np.sum(drift > neighborhood_radius(ledger))))


def gram_init_bound(lambda_a, lambda_b, beta):
    return 0.75 * (lambda_a + beta ** 2 * lambda_b)


def gram_init_width(n, lambda_n, delta):
    """Width above which ``lambda_min(G(theta_0)) >= 3/4 (la + beta^2 lb)`` w.p. ``1 - delta``."""
    return math.ceil(8.0 / lambda_n ** 2 * math.log(2 * n * n / delta))


def coupling_bound(m, beta, lambda_a, delta, constant=1.0):
    """Sup-gap estimate between the network and random-feature trajectories."""
    c = c_coupling(delta)
    return constant * c * c / lambda_a * (1 / math.sqrt(m) + beta + math.sqrt(m) * beta ** 3)


def a_star_construct(B0, target):
    """Outer weights ``a*(b_k)/m`` reproducing the target in expectation over ``B0``."""
    B0 = np.atleast_2d(B0)
    coef = np.asarray(target.coef(B0), dtype=float)
    if np.max(np.abs(coef), initial=0.0) > target.gamma:
        raise ValueError(f"sampled |a*(b)| exceeds gamma = {target.gamma}")
    return coef / B0.shape[0]


def l2_population_risk(a, B0, target, n_test, seed):
    """Unhalved ``|f(.; a, B0) - f*|^2`` over fresh sphere inputs; returns ``(risk, stderr)``."""
    X = sample_sphere(n_test, B0.shape[1], (seed, 0))
    y = target_values(target, X, (seed, 1))
    sq = (relu(X @ B0.T) @ a - y) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_test))


def a_star_risk_bound(gamma, m, delta):
    return gamma ** 2 / m * (1.0 + math.sqrt(2 * math.log(1.0 / delta))) ** 2


def rad_gen_bound(a_norm, m, n, delta):
    """Uniform deviation bound between population and empirical risk of the random-feature model."""
    if not a_norm > 0:
        raise ValueError("a_norm must be positive; pass a tiny positive value for a = 0")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    log_arg = 2.0 / delta * (a_norm + 1.0 / a_norm)
    return (2.0 * (2.0 * math.sqrt(m) * a_norm + 1.0) ** 2 / math.sqrt(n)
            * (1.0 + math.sqrt(2.0 * math.log(log_arg))))


def early_stop_bound(m, n, t, constant=1.0):
    """Population-risk bound at time ``t`` for the early-stopped network.

    ``constant`` defaults to 1.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    inner = (1.0 + math.sqrt(t) + math.sqrt(m * t) / n ** 0.25) ** 2
    drift = (t * t / (m * m) * (1 + m * t) ** 2
             * (1 + t * t / (m * m) * (t + m) ** 4) * inner)
    return constant * (1.0 / m + 1.0 / (m * t) + inner / math.sqrt(n) + drift)


def schedule_from_corollary(n, p):
    """Stopping time and predicted rate exponent for width ``m = n^p``."""
    if p < 0:
        raise ValueError("p must be >= 0")
    if p <= 7 / 8:
        return n ** (-3 * p / 7), 4 * p / 7
    return n ** (-p + 0.5), 0.5


def lyapunov_J(a_t, a_star, risk_t, risk_star, t):
    if t < 0:
        raise ValueError("t must be >= 0")
    diff = np.asarray(a_t, float) - np.asarray(a_star, float)
    return float(t * (risk_t - risk_star) + 0.5 * diff @ diff)


def kernel_expansion(B0, inputs, x, weights):
    """``sum_i g_a(x, x_i) w_i`` with ``g_a(x, x') = relu(B0 x) . relu(B0 x') / (m n)``."""
    X = np.atleast_2d(inputs)
    n, m = X.shape[0], B0.shape[0]
    g = relu(np.atleast_2d(x) @ B0.T) @ relu(X @ B0.T).T / (m * n)
    return g @ np.asarray(weights, float)


def binomial_allowance(delta, trials):
    """Failure fraction tolerated by a frequency test: ``delta`` plus one binomial sd."""
    return delta + math.sqrt(delta * (1 - delta) / trials)


def frequency_report(claim_id, paper_ref, failures, trials, delta, values=None):
    allowed = binomial_allowance(delta, trials)
    vals = {"failure_rate": failures / trials}
    vals.update(values or {})
    return CheckReport(claim_id, paper_ref, vals, allowed, failures / trials <= allowed,
                       trials=trials, failures=failures)


def init_gram(m, beta, inputs, seed, chunk=100_000):
    """``G(theta_0)`` for a fresh initialization, generated chunk by chunk.

    Equivalent in distribution to ``gram_matrices(init_params(...), inputs)``
    but never holds the ``m x d`` inner-weight matrix, so widths in the
    millions stay cheap.  Chunk ``c`` draws from substream ``(seed, c)``.
    """
    X = np.atleast_2d(inputs)
    n, d = X.shape
    Ga = np.zeros((n, n))
    Sb = np.zeros((n, n))
    for c, lo in enumerate(range(0, m, chunk)):
        B = sample_sphere(min(chunk, m - lo), d, (seed, c))
        Z = X @ B.T
        F = relu(Z)
        D = relu_grad(Z)
        Ga += F @ F.T
        Sb += D @ D.T
    Ga /= n * m
    Gb = beta ** 2 * Sb * (X @ X.T) / (n * m)
    return GramPair(0.5 * (Ga + Ga.T), 0.5 * (Gb + Gb.T))


def init_risk_frequency(data, m, beta, delta=0.1, trials=200, seed=0):
    """How often the initial risk exceeds ``init_risk_bound`` over seeded initializations."""
    bound = init_risk_bound(m, beta, delta)
    risks = np.array([empirical_risk(init_params(InitConfig(m, data.d, beta, (seed, k))), data)
                      for k in range(trials)])
    fails = int(np.sum(risks > bound))
    return frequency_report("init_risk", "initial risk bound over random initialization",
                            fails, trials, delta,
                            {"bound": bound, "max_risk": float(risks.max()),
                             "mean_risk": float(risks.mean()), "m": m, "beta": beta})


def gram_init_frequency(inputs, beta, delta=0.1, trials=100, seed=0, m=None):
    """How often ``lambda_min(G(theta_0)) < 3/4 (la + beta^2 lb)`` at the prescribed width."""
    spec = spectral_summary(inputs)
    if m is None:
        m = gram_init_width(spec.n, spec.lambda_n, delta)
    thr = gram_init_bound(spec.lambda_a, spec.lambda_b, beta)
    mins = np.array([min_eigenvalue(init_gram(m, beta, inputs, (seed, k)).G)
                     for k in range(trials)])
    fails = int(np.sum(mins < thr))
    return frequency_report("gram_init", "smallest Gram eigenvalue at initialization",
                            fails, trials, delta,
                            {"threshold": thr, "min_eig_min": float(mins.min()),
                             "min_eig_mean": float(mins.mean()), "m": m,
                             "lambda_a": spec.lambda_a, "lambda_b": spec.lambda_b})


def a_star_frequency(target, d, m=500, delta=0.1, trials=100, n_test=20_000, seed=0):
    """How often the constructed ``a*`` misses its population-risk bound over draws of ``B0``."""
    bound = a_star_risk_bound(target.gamma, m, delta)
    risks = []
    for k in range(trials):
        B0 = sample_sphere(m, d, (seed, k, 0))
        risks.append(l2_population_risk(a_star_construct(B0, target), B0, target, n_test,
                                        (seed, k, 1))[0])
    risks = np.array(risks)
    fails = int(np.sum(risks > bound))
    return frequency_report("a_star_risk", "population risk of the a* construction",
                            fails, trials, delta,
                            {"bound": bound, "max_risk": float(risks.max()),
                             "mean_risk": float(risks.mean()), "m": m})


def rad_gen_frequency(target, d, m=50, n=200, delta=0.1, trials=100, steps=200,
                      n_test=20_000, seed=0):
    """How often ``|R - R_n|`` exceeds the uniform bound for random-feature fits.

    ``B0`` is fixed; each trial draws a training set, fits the outer weights by
    ``steps`` gradient steps from zero, and compares the unhalved empirical
    and population risks of the result.  The budget is ``3 delta``.
    """
    B0 = sample_sphere(m, d, (seed, 0))
    Xt = sample_sphere(n_test, d, (seed, 1))
    Phi_t = relu(Xt @ B0.T)
    yt = target_values(target, Xt, (seed, 2))
    fails, gaps, bounds = 0, [], []
    for k in range(trials):
        data = make_dataset(target, n, d, (seed, 3, k))
        Phi = relu(data.inputs @ B0.T)
        eta = 1.0 / np.linalg.eigvalsh(Phi.T @ Phi / n)[-1]
        a = np.zeros(m)
        for _ in range(steps):
            a -= eta * Phi.T @ (Phi @ a - data.labels) / n
        emp = float(np.mean((Phi @ a - data.labels) ** 2))
        pop = float(np.mean((Phi_t @ a - yt) ** 2))
        bound = rad_gen_bound(max(np.linalg.norm(a), 1e-300), m, n, delta)
        gaps.append(abs(pop - emp))
        bounds.append(bound)
        fails += abs(pop - emp) > bound
    return frequency_report("rad_gen", "uniform generalization gap of random-feature fits",
                            int(fails), trials, 3 * delta,
                            {"max_gap": float(max(gaps)), "min_bound": float(min(bounds))})
