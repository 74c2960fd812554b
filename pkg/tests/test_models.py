import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lazylab.datagen import Dataset, OneNeuron, RandomLabels, make_dataset, sample_sphere
from lazylab.models import (InitConfig, NetParams, empirical_risk, forward, gradient, init_params,
                            param_deviation, path_norm, population_risk_mc, relu_grad, rf_forward)


def exact_forward(a, B, x):
    """Direct sum in exact rational arithmetic."""
    total = Fraction(0)
    for ak, bk in zip(a, B):
        z = sum(Fraction(float(u)) * Fraction(float(v)) for u, v in zip(bk, x))
        total += Fraction(float(ak)) * max(z, Fraction(0))
    return float(total)


def random_params(m, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return NetParams(scale * rng.standard_normal(m), rng.standard_normal((m, d)))


def smooth_instance(seed, m=7, n=6, d=4, margin=1e-3):
    """Random parameters and data with every pre-activation at least ``margin`` from the kink."""
    k = 0
    while True:
        p = random_params(m, d, (seed, k))
        data = make_dataset(RandomLabels(), n, d, (seed, k))
        if np.min(np.abs(data.inputs @ p.B.T)) > margin:
            return p, data
        k += 1


def fd_gradient(p, data, h=1e-6):
    v = p.flat()
    g = np.zeros_like(v)
    for i in range(v.size):
        up, dn = v.copy(), v.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (empirical_risk(NetParams.from_flat(up, p.m, p.d), data)
                - empirical_risk(NetParams.from_flat(dn, p.m, p.d), data)) / (2 * h)
    return g


def test_init_params_invariants():
    p = init_params(InitConfig(m=50, d=6, beta=0.3, seed=2))
    assert np.all(np.abs(p.a) == 0.3)
    np.testing.assert_allclose(np.linalg.norm(p.B, axis=1), 1.0, atol=1e-12)
    assert p.m == 50 and p.d == 6


def test_init_params_zero_beta_and_determinism():
    cfg = InitConfig(m=10, d=3, beta=0.0, seed=4)
    p = init_params(cfg)
    assert np.all(p.a == 0)
    q = init_params(cfg)
    assert np.array_equal(p.B, q.B)


def test_init_params_sign_balance():
    # CLT oracle: sd of the mean of 10^4 Rademacher signs is 0.01
    p = init_params(InitConfig(m=10_000, d=2, beta=1.0, seed=0))
    assert abs(p.a.mean()) <= 0.05


def test_init_config_validation():
    with pytest.raises(ValueError):
        InitConfig(m=0, d=2, beta=1)
    with pytest.raises(ValueError):
        InitConfig(m=2, d=2, beta=-1)


def test_forward_trivial():
    e1 = np.array([1.0, 0.0, 0.0])
    p = NetParams([2.0], [e1])
    assert forward(p, e1) == 2.0
    assert forward(NetParams([1.0], [e1]), -e1) == 0.0


def test_forward_matches_exact_sum():
    p = random_params(7, 5, 3)
    for x in sample_sphere(10, 5, 1):
        assert forward(p, x) == pytest.approx(exact_forward(p.a, p.B, x), abs=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(random_params(3, 4, 0), np.ones(3) / np.sqrt(3))


def test_rf_forward():
    p = random_params(6, 3, 2)
    X = sample_sphere(5, 3, 0)
    np.testing.assert_array_equal(rf_forward(p.a, p.B, X), forward(p, X))
    assert rf_forward(np.zeros(6), p.B, X[0]) == 0.0
    for x in X:
        assert rf_forward(p.a, p.B, x) == pytest.approx(exact_forward(p.a, p.B, x), abs=1e-12)


def test_forward_is_homogeneous_per_neuron():
    p = random_params(5, 4, 8)
    x = sample_sphere(1, 4, 3)[0]
    contrib = p.a * np.maximum(p.B @ x, 0)
    q = p.copy()
    q.B[2] *= 3.0
    assert forward(q, x) == pytest.approx(forward(p, x) + 2 * contrib[2], abs=1e-12)


def test_empirical_risk_cases():
    data = make_dataset(RandomLabels(), 8, 3, 0)
    p = random_params(4, 3, 1)
    perfect = Dataset(data.inputs, np.clip(forward(p, data.inputs), -1, 1))
    p_fit = NetParams(p.a * 0, p.B)
    assert empirical_risk(p_fit, Dataset(data.inputs, np.zeros(8))) == 0.0
    assert empirical_risk(NetParams(np.zeros(4), p.B), Dataset(data.inputs, np.ones(8))) == 0.5
    e = [exact_forward(p.a, p.B, x) - y for x, y in zip(perfect.inputs, data.labels)]
    oracle = sum(Fraction(v) ** 2 for v in e) / (2 * len(e))
    assert empirical_risk(p, data) == pytest.approx(float(oracle), abs=1e-12)
    with pytest.raises(ValueError):
        empirical_risk(p, Dataset(np.zeros((0, 3)), np.zeros(0)))


def test_population_risk_zero_network_one_neuron():
    d = 10
    p = NetParams(np.zeros(3), sample_sphere(3, d, 0))
    risk, se = population_risk_mc(p, OneNeuron.axis(d), 100_000, 1)
    assert abs(risk - 1 / (4 * d)) <= 3 * se


def test_population_risk_exact_fit_and_random_labels():
    d = 4
    e1 = np.eye(d)[0]
    p = NetParams([1.0], [e1])
    risk, _ = population_risk_mc(p, OneNeuron(e1), 10_000, 0)
    assert risk == 0.0
    with pytest.raises(ValueError):
        population_risk_mc(p, RandomLabels(), 10, 0)


def test_gradient_trivial_instance():
    e1 = np.array([1.0, 0.0])
    p = NetParams([1.0], [e1])
    data = Dataset(e1[None], [0.0])
    g = gradient(p, data)
    assert g.a[0] == 1.0
    np.testing.assert_array_equal(g.B[0], e1)


def test_gradient_zero_at_zero_residual():
    p = random_params(4, 3, 0)
    X = sample_sphere(6, 3, 1)
    y = forward(p, X)
    data = Dataset(X, y / max(1.0, np.max(np.abs(y))))
    p.a /= max(1.0, np.max(np.abs(y)))
    g = gradient(p, data)
    assert np.max(np.abs(g.flat())) <= 1e-15


def test_relu_grad_convention():
    assert relu_grad(np.array([0.0]))[0] == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    p, data = smooth_instance(seed)
    g = gradient(p, data).flat()
    fd = fd_gradient(p, data)
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_path_norm():
    B = sample_sphere(2, 3, 0)
    assert path_norm(NetParams([1.0, -2.0], B)) == pytest.approx(3.0)
    assert path_norm(NetParams([0.0, 0.0], B)) == 0.0
    p = random_params(9, 4, 5)
    oracle = sum(abs(float(ak)) * math.sqrt(sum(Fraction(float(v)) ** 2 for v in bk))
                 for ak, bk in zip(p.a, p.B))
    assert path_norm(p) == pytest.approx(oracle, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000))
def test_path_norm_rebalancing_invariance(seed):
    p = random_params(6, 3, seed)
    q = NetParams(3 * p.a, p.B / 3)
    assert path_norm(q) == pytest.approx(path_norm(p), rel=1e-12)


def test_empirical_risk_nonnegative_property():
    for s in range(20):
        p = random_params(5, 3, s)
        data = make_dataset(RandomLabels(), 7, 3, s)
        assert empirical_risk(p, data) >= 0


def test_param_deviation():
    p = random_params(5, 3, 0)
    assert param_deviation(p, p) == (0.0, 0.0)
    q = p.copy()
    q.a[3] += 0.3
    da, db = param_deviation(q, p)
    assert da == pytest.approx(0.3) and db == 0.0
    r = random_params(5, 3, 1)
    da, db = param_deviation(r, p)
    assert da == max(abs(x - y) for x, y in zip(r.a, p.a))
    assert db == max(np.linalg.norm(u - v) for u, v in zip(r.B, p.B))
    with pytest.raises(ValueError):
        param_deviation(random_params(4, 3, 0), p)


def test_params_json_round_trip():
    p = init_params(InitConfig(m=6, d=3, beta=0.1, seed=0))
    p.a += np.random.default_rng(0).standard_normal(6) * 1e-7
    text = p.to_json()
    q = NetParams.from_json(text)
    assert np.array_equal(p.a, q.a) and np.array_equal(p.B, q.B) and q.beta == p.beta
    assert q.to_json() == text
