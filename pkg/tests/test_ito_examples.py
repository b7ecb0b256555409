import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochsewing import gaussian_paths as gp
from stochsewing import ito_examples as ito
from stochsewing import sewing as sw


@given(st.floats(0.1, 1.0), st.floats(0.5, 10.0))
def test_clipped_power_is_holder_with_unit_constant(tau, radius):
    f = ito.clipped_power(tau, radius)
    assert ito.holder_constant(f, tau, -2 * radius, 2 * radius, n=513) <= 1.0 + 1e-9


def test_clipped_power_rejects_bad_exponent():
    with pytest.raises(ValueError):
        ito.clipped_power(1.5, 1.0)


def test_ito_germ_shapes(bm):
    g = ito.ito_germ(lambda x: x, bm)
    assert g.value_shape == (2, 2)
    g2 = ito.ito_germ(lambda x: np.sin(x[..., 0]), bm)
    assert g2.value_shape == (1, 2)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 64), min_size=3, max_size=3).map(sorted))
def test_ito_conditional_delta_is_zero(bm, tri):
    germ = ito.ito_germ(np.cos, bm)
    assert np.all(germ.cond_delta(*([i] for i in tri)) == 0)


def test_ito_delta_is_centred_against_past_functionals():
    g = gp.TimeGrid(0.0, 1.0, 64)
    b = gp.sample_brownian(g, 1, 20000, seed=12)
    germ = ito.ito_germ(np.sin, b)
    d = sw.delta(germ, 0.25, 0.5, 1.0)[:, 0, 0]
    w = np.sign(b.brownian_values()[:, 16, 0])
    z = d * w
    assert abs(z.mean()) <= 4 * z.std(ddof=1) / math.sqrt(z.size)


def test_brownian_predictable_part_is_exact(bm):
    for n in (0, 3, 6):
        part = sw.Partition.dyadic(0.0, 1.0, n)
        d = sw.doob_split(ito.brownian_qv_germ(bm), part)
        assert np.array_equal(d.J, np.broadcast_to(np.eye(2), d.J.shape))


def test_poisson_predictable_part_and_counts():
    g = gp.TimeGrid(0.0, 2.0, 256)
    b = gp.sample_poisson(1.5, g, 500, seed=4)
    res = ito.quadratic_variation(b, "poisson", 2.0, 8, min_level=2)
    assert np.allclose(res.doob.J[:, 0, 0], 3.0)
    N = b.poisson_counts()[:, -1]
    assert np.mean(np.round(res.limit[:, 0, 0]) == N) >= 0.95


def test_quadratic_variation_rejects_unknown_source(bm):
    with pytest.raises(ValueError):
        ito.quadratic_variation(bm, "levy", 1.0, 4)


def test_poisson_germ_is_additive():
    g = gp.TimeGrid(0.0, 1.0, 32)
    b = gp.sample_poisson(2.0, g, 50, seed=1)
    germ = ito.poisson_germ(b)
    d = sw.delta(germ, 0.25, 0.5, 0.75)
    assert np.max(np.abs(d)) < 1e-12


def test_qv_martingale_defect_is_centred():
    g = gp.TimeGrid(0.0, 1.0, 16)
    b = gp.sample_brownian(g, 1, 40000, seed=6)
    for label, mean, se in ito.qv_martingale_defect(b, 0.5, 1.0):
        assert np.all(np.abs(mean) <= 4 * se + 1e-12), label


@pytest.mark.parametrize("m", [1.0, 1.5, 2.0])
def test_poisson_lm_exact_matches_small_gap_expansion(m):
    # zero, one or two jumps; the rest is O(h^3)
    h = 1e-4
    approx = math.exp(-h) * (h ** m + h * (1 - h) ** m + h * h / 2 * (2 - h) ** m)
    assert ito.poisson_lm_exact(1.0, h, m) == pytest.approx(approx ** (1 / m), rel=1e-6)


def test_poisson_counterexample_rows_match_exact():
    rows, reps = ito.poisson_counterexample(1.0, [1.0, 2.0], [2.0 ** -k for k in range(2, 8)],
                                            200000, seed=3)
    for r in rows:
        assert abs(r.lm_value - r.exact) <= 5 * r.stderr
    assert set(reps) == {1.0, 2.0}
    with pytest.raises(ValueError):
        ito.poisson_counterexample(1.0, [3.0], [0.5, 0.25, 0.125, 0.0625], 10, seed=0)


def test_ito_integral_of_identity_matches_closed_form():
    g = gp.TimeGrid(0.0, 1.0, 256)
    b = gp.sample_brownian(g, 1, 2000, seed=2)
    lim, rep = ito.ito_integral(lambda x: x, b, 1.0, 8, min_level=2)
    W = b.brownian_values()
    # left-point sums telescope: sum W dW = (W_1^2 - sum dW^2) / 2
    qv = np.sum(np.diff(W[:, :, 0], axis=1) ** 2, axis=1)
    assert np.allclose(lim[:, 0, 0], (W[:, -1, 0] ** 2 - qv) / 2)
    assert rep.fitted_exponent == pytest.approx(0.5, abs=0.15)


def test_taylor_bookkeeping_is_exact(bm):
    f = lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1])

    def grad(x):
        return np.stack([np.cos(x[..., 0]) * np.cos(x[..., 1]),
                         -np.sin(x[..., 0]) * np.sin(x[..., 1])], axis=-1)

    def hess(x):
        a, b = x[..., 0], x[..., 1]
        h = np.empty(x.shape + (2,))
        h[..., 0, 0] = -np.sin(a) * np.cos(b)
        h[..., 1, 1] = -np.sin(a) * np.cos(b)
        h[..., 0, 1] = h[..., 1, 0] = -np.cos(a) * np.sin(b)
        return h

    t = ito.ito_formula_terms(f, grad, hess, bm, 5)
    assert np.allclose(t.total, t.first + t.second + t.remainder, atol=1e-12)
    assert np.allclose(t.second, t.bracket + t.fluctuation, atol=1e-12)
