import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochsewing import averaging as avg
from stochsewing import gaussian_paths as gp
from stochsewing import heat as ht
from stochsewing import young as yg

G = gp.TimeGrid(0.0, 1.0, 256)


def _smooth_paths(seed, n_paths=4, shape=(1,)):
    rng = np.random.default_rng(seed)
    t = G.points
    freq = rng.uniform(0.5, 3, size=(n_paths, 1) + shape)
    phase = rng.uniform(0, 6, size=(n_paths, 1) + shape)
    return np.sin(freq * t[None, :, None] + phase) if shape == (1,) else \
        np.sin(freq * t[None, :, None, None] + phase)


def test_holder_path_validation():
    with pytest.raises(ValueError):
        yg.HolderPath(G, np.zeros((2, 10, 1)), 0.5)
    with pytest.raises(ValueError):
        yg.HolderPath(G, np.zeros((2, 257, 1)), 1.5)


def test_seminorm_of_linear_path():
    v = np.broadcast_to(2.0 * G.points[None, :, None], (3, 257, 1))
    hp = yg.HolderPath(G, v, 1.0)
    assert np.allclose(hp.seminorm(), 2.0)
    assert hp.empirical_exponent() == pytest.approx(1.0)


def test_exponent_warning_for_rough_path():
    b = gp.sample_brownian(G, 1, 200, seed=1).brownian_values()
    with pytest.warns(UserWarning):
        yg.HolderPath(G, b, 0.9).check_exponent()


def test_young_integral_refuses_rough_pairs():
    b = gp.sample_brownian(G, 1, 5, seed=1).brownian_values()
    y = yg.HolderPath(G, b, 0.5)
    with pytest.raises(ValueError):
        yg.young_integral(y, y, 0.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinearity(seed, a, b):
    y1, y2 = _smooth_paths(seed), _smooth_paths(seed + 1)
    v = _smooth_paths(seed + 2)
    V = yg.HolderPath(G, v, 1.0)
    comb = yg.young_integral(yg.HolderPath(G, a * y1 + b * y2, 1.0), V, 0.0, 1.0).value
    sep = a * yg.young_integral(yg.HolderPath(G, y1, 1.0), V, 0.0, 1.0).value \
        + b * yg.young_integral(yg.HolderPath(G, y2, 1.0), V, 0.0, 1.0).value
    assert np.allclose(comb, sep, atol=1e-12)


def test_additivity_over_adjacent_intervals():
    y, v = yg.HolderPath(G, _smooth_paths(1), 1.0), yg.HolderPath(G, _smooth_paths(2), 1.0)
    whole = yg.young_integral(y, v, 0.0, 1.0).value
    left = yg.young_integral(y, v, 0.0, 0.5).value
    right = yg.young_integral(y, v, 0.5, 1.0).value
    assert np.allclose(whole, left + right, atol=1e-13)


def test_young_integral_of_smooth_paths_converges():
    t = G.points
    y = yg.HolderPath(G, np.broadcast_to(t[None, :, None], (1, 257, 1)), 1.0)
    v = yg.HolderPath(G, np.broadcast_to(t[None, :, None] ** 2, (1, 257, 1)), 1.0)
    res = yg.young_integral(y, v, 0.0, 1.0)
    # int_0^1 t d(t^2) = 2/3; left sums are low by O(dt)
    assert float(res.value[0, 0, 0]) == pytest.approx(2 / 3, abs=2 * G.dt)
    assert res.report.fitted_exponent == pytest.approx(1.0, abs=0.15)


def test_deterministic_sewing_bound():
    """|int y dv - y_s v_{s,t}| <= C |t-s|^2 for Lipschitz y and v."""
    y, v = yg.HolderPath(G, _smooth_paths(3), 1.0), yg.HolderPath(G, _smooth_paths(4), 1.0)
    ratios = []
    for span in (256, 64, 16, 4):
        for s0 in range(0, 257 - span, span):
            s, t = G.points[s0], G.points[s0 + span]
            val = yg.young_integral(y, v, s, t).value[:, 0, 0]
            first = y.values[:, s0, 0] * (v.values[:, s0 + span, 0] - v.values[:, s0, 0])
            ratios.append(np.max(np.abs(val - first)) / (t - s) ** 2)
    assert np.isfinite(max(ratios)) and max(ratios) < 50


def test_linear_flow_scalar_exponential():
    V = np.broadcast_to((0.7 * G.points)[None, :, None, None], (2, 257, 1, 1))
    Y = yg.solve_linear_young(yg.HolderPath(G, V, 1.0))
    assert float(Y[0, -1, 0, 0]) == pytest.approx(math.exp(0.7), rel=2e-3)


def test_flow_multiplicativity():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(2, 2))
    t = G.points
    V = np.broadcast_to(np.sin(t)[None, :, None, None] * A, (1, 257, 2, 2)).copy()
    hp = yg.HolderPath(G, V, 1.0)
    full = yg.solve_linear_young(hp)
    first = full[:, 128]
    second = yg.solve_linear_young(hp, start=128)[:, -1]
    assert np.allclose(first @ second, full[:, -1], rtol=5e-3, atol=5e-3)


def test_flow_blowup_raises():
    V = np.broadcast_to((50.0 * G.points)[None, :, None, None], (1, 257, 1, 1))
    with pytest.raises(yg.BlowUp):
        yg.solve_linear_young(yg.HolderPath(G, V, 1.0), blowup=1e6)


def test_build_v_matches_constant_jacobian():
    dr = avg.make_drift("linear", 2, matrix=[[0.0, 1.0], [-2.0, 0.5]])
    X = np.zeros((1, 257, 2))
    V = yg.build_V(dr, X, G)
    # V^{kj}_1 = d_k b^j = A[j, k]
    assert np.allclose(V.values[0, -1], np.array([[0.0, -2.0], [1.0, 0.5]]))


def test_linear_drift_flow_equals_matrix_exponential():
    from scipy.linalg import expm
    A = np.array([[-0.5, 0.3], [0.1, -0.2]])
    g = gp.TimeGrid(0.0, 1.0, 512)
    cfg = avg.SdeConfig(0.5, avg.make_drift("linear", 2, matrix=A), [0.0, 0.0], g)
    res = yg.jacobian_check(cfg, 4, seed=1)
    assert np.allclose(res.flow[0], expm(A).T, rtol=5e-3)
    assert res.relative_error < 1e-6


def test_division_identity_small():
    g = gp.TimeGrid(0.0, 1.0, 256)
    f = ht.gaussian_bump(1, 8.0, 1024, 0.3)
    s1 = avg.solve_singular_sde(avg.SdeConfig(0.3, avg.make_drift("sign"), 0.0, g), 100, seed=2)
    s2 = avg.solve_singular_sde(avg.SdeConfig(0.3, avg.make_drift("sign"), 0.3, g),
                                bundle=s1.bundle)
    res = yg.division_identity_check(f, s1, s2)
    assert res.relative_residual < 0.05
    other = avg.solve_singular_sde(avg.SdeConfig(0.3, avg.make_drift("sign"), 0.3, g), 100,
                                   seed=3)
    with pytest.raises(ValueError):
        yg.division_identity_check(f, s1, other)
