import math

import numpy as np
import pytest

from lazylab.datagen import (BarronDensity, Dataset, OneNeuron, RandomLabels, make_dataset,
                             sample_sphere)
from lazylab.dynamics import (CSV_COLUMNS, RunConfig, TrainingDiverged, TrajectoryLog, coupled_run,
                              default_probes, stability_threshold, train_nn, train_regularized,
                              train_rf)
from lazylab.models import (InitConfig, NetParams, empirical_risk, forward, gradient, init_params,
                            path_norm, relu)
from lazylab.theory import a_star_construct


def rf_ode_solution(a0, Phi, y, t):
    """Exact solution of da/dt = -(Phi^T (Phi a - y)) / n by eigendecomposition."""
    n = Phi.shape[0]
    H = Phi.T @ Phi / n
    lam, V = np.linalg.eigh(H)
    r = V.T @ (H @ a0 - Phi.T @ y / n)
    lt = lam * t
    phi = np.where(np.abs(lt) > 1e-12, -np.expm1(-lt) / np.where(lam == 0, 1, lam), t)
    return a0 - V @ (phi * r)


def small_problem(seed=0, n=20, d=5, m=30, beta=0.5):
    data = make_dataset(RandomLabels(), n, d, seed)
    return init_params(InitConfig(m=m, d=d, beta=beta, seed=seed)), data


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(eta=0, max_steps=10)
    with pytest.raises(ValueError):
        RunConfig(eta=0.1, max_steps=0)


def test_train_nn_stationary_at_exact_fit():
    p = init_params(InitConfig(m=10, d=3, beta=0.05, seed=0))
    X = sample_sphere(6, 3, 1)
    data = Dataset(X, forward(p, X))
    q, log = train_nn(p, data, RunConfig(eta=0.1, max_steps=50))
    assert np.array_equal(q.a, p.a) and np.array_equal(q.B, p.B)
    assert log.final["train_risk"] == 0.0 and log.status == "ok"


def test_train_nn_one_step_is_euler():
    p, data = small_problem()
    eta = 0.05
    q, log = train_nn(p, data, RunConfig(eta=eta, max_steps=1))
    g = gradient(p, data)
    np.testing.assert_array_equal(q.a, p.a - eta * g.a)
    np.testing.assert_allclose(q.B, p.B - eta * g.B, rtol=0, atol=1e-15)
    assert [r["t"] for r in log.records] == [0.0, eta]


def test_train_nn_energy_dissipation():
    p, data = small_problem(1, m=200)
    eta = 0.5 * stability_threshold(p, data.inputs)
    _, log = train_nn(p, data, RunConfig(eta=eta, max_steps=500, log_every=1))
    r = np.array(log.column("train_risk"))
    assert np.all(np.diff(r) <= 0)
    assert log.risk_increases == []


def test_train_nn_divergence_is_reported():
    p, data = small_problem(2, beta=1.0)
    with pytest.raises(TrainingDiverged) as info:
        train_nn(p, data, RunConfig(eta=1e4, max_steps=100))
    assert info.value.log.status == "diverged"
    assert len(info.value.log) >= 1


def test_train_nn_status_and_stop_rules():
    p, data = small_problem(3)
    _, log = train_nn(p, data, RunConfig(eta=0.01, max_steps=5, stop_risk=1e-12))
    assert log.status == "budget-exhausted" and log.final["step"] == 5
    _, log = train_nn(p, data, RunConfig(eta=0.01, max_steps=10 ** 6, stop_time=0.1))
    assert log.final["step"] == 10 and log.status == "ok"
    _, log = train_nn(p, data, RunConfig(eta=0.01, max_steps=10, stop_risk=10.0))
    assert log.final["step"] == 0 and log.status == "ok"


def test_train_nn_logs_requested_quantities():
    p, data = small_problem(4)
    test = make_dataset(RandomLabels(), 30, 5, 99)
    probes = default_probes(data, extra=7)
    q, log = train_nn(p, data, RunConfig(eta=0.02, max_steps=20, log_every=4),
                      test=test, probes=probes, track_gram=True)
    assert log.column("step") == [0, 4, 8, 12, 16, 20]
    assert log.final["test_risk"] == pytest.approx(empirical_risk(q, test), rel=1e-12)
    assert log.final["path_norm"] == pytest.approx(path_norm(q), rel=1e-12)
    assert log.records[0]["gram_drift"] == 0.0 and log.final["gram_drift"] > 0
    vals = log.extras["probe_values"]
    assert vals.shape == (6, 27)
    np.testing.assert_allclose(vals[-1], forward(q, probes), rtol=1e-12)


def test_default_probes():
    data = make_dataset(RandomLabels(), 5, 3, 0)
    P = default_probes(data)
    assert P.shape == (105, 3)
    assert np.array_equal(P[:5], data.inputs)
    np.testing.assert_allclose(np.linalg.norm(P, axis=1), 1.0)


def test_trajectory_csv_round_trip(tmp_path):
    p, data = small_problem(5)
    _, log = train_nn(p, data, RunConfig(eta=0.01, max_steps=6, log_every=3))
    path = tmp_path / "run.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    # unlogged columns stay empty
    assert lines[1].split(",")[3] == "" and lines[1].split(",")[-1] == ""
    back = TrajectoryLog.from_csv(path)
    assert back.column("train_risk") == log.column("train_risk")
    assert back.column("step") == log.column("step")


def test_runs_are_deterministic(tmp_path):
    paths = []
    for k in range(2):
        p, data = small_problem(6)
        _, log = train_nn(p, data, RunConfig(eta=0.03, max_steps=40, log_every=5),
                          track_gram=True)
        paths.append(tmp_path / f"{k}.csv")
        log.to_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_train_rf_stationary():
    p, data = small_problem(7)
    y = relu(data.inputs @ p.B.T) @ p.a
    y = y / max(1.0, np.max(np.abs(y)))
    a0 = p.a / max(1.0, np.max(np.abs(relu(data.inputs @ p.B.T) @ p.a)))
    a, log = train_rf(a0, p.B, Dataset(data.inputs, y), RunConfig(eta=0.1, max_steps=20))
    np.testing.assert_allclose(a, a0, atol=1e-15)
    assert log.final["max_b_dev"] == 0.0


def test_train_rf_single_sample_recursion():
    B0 = sample_sphere(6, 3, 0)
    x = sample_sphere(1, 3, 1)
    phi = relu(x @ B0.T)[0]
    data = Dataset(x, [0.8])
    eta = 0.1
    a, log = train_rf(np.zeros(6), B0, data, RunConfig(eta=eta, max_steps=15))
    ratio = 1 - eta * phi @ phi
    e = [-0.8 * ratio ** k for k in range(16)]
    np.testing.assert_allclose([math.sqrt(2 * r) for r in log.column("train_risk")],
                               np.abs(e), rtol=1e-12)
    assert phi @ a - 0.8 == pytest.approx(e[-1], rel=1e-12)


@pytest.mark.parametrize("m", [5, 20])
def test_train_rf_first_order_against_ode_oracle(m):
    n, d, T = 15, 4, 3.0
    data = make_dataset(RandomLabels(), n, d, m)
    p0 = init_params(InitConfig(m=m, d=d, beta=0.2, seed=m))
    Phi = relu(data.inputs @ p0.B.T)
    exact = rf_ode_solution(p0.a, Phi, data.labels, T)
    etas = [0.04, 0.02, 0.01, 0.005]
    errs = []
    for eta in etas:
        a, _ = train_rf(p0.a, p0.B, data, RunConfig(eta=eta, max_steps=10 ** 6, stop_time=T))
        errs.append(np.linalg.norm(a - exact))
    slope = np.polyfit(np.log(etas), np.log(errs), 1)[0]
    assert abs(slope - 1.0) <= 0.15


def test_train_rf_lyapunov_non_increasing():
    n, d, m = 30, 5, 200
    target = OneNeuron.axis(d)
    data = make_dataset(target, n, d, 0)
    p0 = init_params(InitConfig(m=m, d=d, beta=0.0, seed=0))
    comp = a_star_construct(p0.B, BarronDensity.constant(1.0))
    probe_cfg = train_rf(p0.a, p0.B, data, RunConfig(eta=1.0, max_steps=1))[1]
    eta = 0.5 * probe_cfg.stability_eta
    _, log = train_rf(p0.a, p0.B, data, RunConfig(eta=eta, max_steps=2000, log_every=10),
                      comparator=comp)
    J = np.array(log.column("lyapunov"))
    assert np.all(np.diff(J) <= 1e-12 * max(1.0, J[0]))


def test_train_rf_residual_integral_reproduces_change():
    p, data = small_problem(8, n=6, m=12)
    a, log = train_rf(p.a, p.B, data, RunConfig(eta=0.1, max_steps=50))
    x = sample_sphere(3, 5, 0)
    g = relu(x @ p.B.T) @ relu(data.inputs @ p.B.T).T / (p.m * data.n)
    np.testing.assert_allclose(g @ log.extras["residual_integral"],
                               relu(x @ p.B.T) @ (a - p.a), atol=1e-12)


def test_regularized_zero_lambda_matches_train_nn():
    p, data = small_problem(9)
    cfg = RunConfig(eta=0.02, max_steps=30, log_every=3)
    q1, l1 = train_nn(p, data, cfg)
    q2, l2 = train_regularized(p, data, 0.0, cfg)
    assert np.array_equal(q1.a, q2.a) and np.array_equal(q1.B, q2.B)
    assert l1.column("train_risk") == l2.column("train_risk")


def test_regularized_pure_penalty_shrinks_path_norm():
    p = init_params(InitConfig(m=20, d=4, beta=0.01, seed=0))
    data = Dataset(sample_sphere(10, 4, 0), np.zeros(10))
    _, log = train_regularized(p, data, 0.5, RunConfig(eta=1e-3, max_steps=300, log_every=10))
    pn = np.array(log.column("path_norm"))
    assert np.all(np.diff(pn) < 0)


def test_regularized_objective_non_increasing():
    p, data = small_problem(10, m=50, beta=0.3)
    _, log = train_regularized(p, data, 0.01, RunConfig(eta=1e-3, max_steps=1000))
    obj = np.array(log.column("objective"))
    assert np.all(np.diff(obj) <= 1e-12)
    assert obj[-1] < obj[0]


def test_regularized_validation():
    p, data = small_problem(0)
    with pytest.raises(ValueError):
        train_regularized(p, data, -1.0, RunConfig(eta=0.1, max_steps=1))
    p1 = init_params(InitConfig(m=3, d=1, beta=0.1))
    d1 = Dataset(np.array([[1.0], [-1.0]]), [0.1, 0.2])
    with pytest.raises(ValueError):
        train_regularized(p1, d1, 0.1, RunConfig(eta=0.1, max_steps=1))


def test_coupled_run_initial_gap_and_first_step():
    p, data = small_problem(11, beta=0.3)
    eta = 0.05
    ln, lr, gap = coupled_run(p, data, RunConfig(eta=eta, max_steps=1), default_probes(data, 10))
    assert gap[0, 1] == 0.0
    # both a-updates use the initial features, so only the inner-weight move separates them
    assert ln.final["max_a_dev"] == lr.final["max_a_dev"]
    q, _ = train_nn(p, data, RunConfig(eta=eta, max_steps=1))
    bound = np.sum(np.abs(q.a) * np.linalg.norm(q.B - p.B, axis=1))
    assert 0 < gap[1, 1] <= bound


def test_coupled_run_matches_separate_runs():
    p, data = small_problem(12, m=40)
    cfg = RunConfig(eta=0.05, max_steps=30, log_every=10)
    P = default_probes(data, 5)
    ln, lr, gap = coupled_run(p, data, cfg, P)
    q, l1 = train_nn(p, data, cfg)
    a, l2 = train_rf(p.a, p.B, data, cfg)
    assert ln.column("train_risk") == pytest.approx(l1.column("train_risk"), rel=1e-12)
    assert lr.column("train_risk") == pytest.approx(l2.column("train_risk"), rel=1e-12)
    expect = np.max(np.abs(forward(q, P) - forward(NetParams(a, p.B), P)))
    assert gap[-1, 1] == pytest.approx(expect, rel=1e-10)
    assert ln.column("sup_gap") == list(gap[:, 1])


def test_halving_eta_changes_risk_little():
    """Logged risks approximate the continuous flow: halving eta moves them by < 1% at matched t."""
    d = 10
    data = make_dataset(OneNeuron.axis(d), 30, d, 3)
    p0 = init_params(InitConfig(m=300, d=d, beta=0.0, seed=3))
    risks = []
    for eta in (0.01, 0.005):
        _, log = train_nn(p0, data, RunConfig(eta, int(round(50 / eta)),
                                              log_every=int(round(5 / eta))))
        risks.append(np.array(log.column("train_risk")))
    assert len(risks[0]) == len(risks[1]) == 11
    assert np.max(np.abs(risks[0] - risks[1]) / risks[1]) < 0.01
