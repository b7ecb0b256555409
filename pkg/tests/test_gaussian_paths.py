import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochsewing import gaussian_paths as gp


def test_grid_points_and_index():
    g = gp.TimeGrid(0.0, 2.0, 8)
    assert g.dt == 0.25
    assert np.all(np.diff(g.points) > 0)
    assert g.index_of(1.5) == 6
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        gp.TimeGrid(0.0, 1.0, 0)


@given(st.floats(0.05, 0.95), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_fbm_covariance_diagonal_and_symmetry(H, s, t):
    assert math.isclose(gp.fbm_covariance(H, t, t), t ** (2 * H), rel_tol=1e-12, abs_tol=1e-15)
    assert gp.fbm_covariance(H, s, t) == pytest.approx(gp.fbm_covariance(H, t, s))


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5, 0.7])
def test_covariance_matrix_psd(H):
    m = gp.FbmModel(H, gp.TimeGrid(0.0, 1.0, 32))
    c = m.cov
    assert np.allclose(c, c.T)
    assert np.linalg.eigvalsh(c).min() > -1e-10


def test_sigma_h_is_brownian_at_half():
    assert gp.sigma_H(0.5, 0.3, 0.7) == pytest.approx(math.sqrt(0.4), rel=1e-8)
    assert gp.sigma_H(0.3, 0.4, 0.4) == 0.0
    assert gp.sigma_H(0.3, 0.0, 1.0) == pytest.approx(1.0, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.0, 0.9), st.floats(0.01, 1.0))
def test_sigma_h_positive_and_bounded_by_total_variance(H, s, gap):
    t = s + gap
    sig = gp.sigma_H(H, s, t)
    assert 0 < sig <= math.sqrt(gp.fbm_covariance(H, t, t)) + 1e-9


def test_kernel_closed_matches_quadrature():
    for H in (0.2, 0.4):
        for t, r in ((1.0, 0.3), (0.7, 0.69), (2.0, 0.01)):
            assert float(gp.kernel_closed(H, t, r)) == pytest.approx(gp.kernel_KH(H, t, r), rel=1e-6)


def test_brownian_sampler_is_deterministic_across_workers():
    g = gp.TimeGrid(0.0, 1.0, 16)
    a = gp.sample_brownian(g, 2, 300, seed=9, workers=1)
    b = gp.sample_brownian(g, 2, 300, seed=9, workers=4)
    assert np.array_equal(a.w_increments, b.w_increments)
    c = gp.sample_brownian(g, 2, 300, seed=10)
    assert not np.array_equal(a.w_increments, c.w_increments)


def test_brownian_moments():
    g = gp.TimeGrid(0.0, 1.0, 16)
    b = gp.sample_brownian(g, 1, 20000, seed=1)
    v = b.brownian_values()
    assert v[:, 0].max() == 0.0
    assert np.var(v[:, -1, 0]) == pytest.approx(1.0, abs=0.05)


def test_poisson_sampler():
    g = gp.TimeGrid(0.0, 1.0, 64)
    b = gp.sample_poisson(2.0, g, 5000, seed=2)
    assert np.all((b.jump_times >= 0) & (b.jump_times <= 1))
    N = b.poisson_counts()
    assert N[:, 0].max() == 0
    assert np.all(np.diff(N, axis=1) >= 0)
    assert N[:, -1].mean() == pytest.approx(2.0, abs=0.1)


def test_volterra_rejects_rough_above_half():
    with pytest.raises(gp.DomainError):
        gp.sample_fbm_volterra(0.7, gp.TimeGrid(0.0, 1.0, 8), 1, 4, seed=0)


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5])
def test_volterra_model_variance(H):
    m = gp.VolterraFbm(H, gp.TimeGrid(0.0, 1.0, 256))
    for i in (64, 128, 256):
        t = i / 256
        assert m.variance(i) == pytest.approx(t ** (2 * H), rel=0.03)


def test_volterra_is_linear_in_its_noise(fbm):
    m = fbm.model
    xi = fbm.w_increments / math.sqrt(fbm.grid.dt)
    again = m.values(xi, fbm.aux_noise, fbm.aux_origin)
    assert np.array_equal(again, fbm.fbm_values)
    doubled = m.values(2 * xi, 2 * fbm.aux_noise, 2 * fbm.aux_origin)
    assert np.allclose(doubled, 2 * fbm.fbm_values)


def test_conditional_mean_is_identity_at_present(fbm):
    m = fbm.model
    for k in (5, 40, 64):
        cm = m.cond_mean(fbm, k, [k])[:, 0]
        assert np.allclose(cm, fbm.fbm_values[:, k], atol=1e-12)


def test_cond_variance_table_matches_scalar():
    m = gp.VolterraFbm(0.2, gp.TimeGrid(0.0, 1.0, 32))
    tab = m.cond_variance_table
    for k, i in ((0, 5), (3, 9), (10, 32), (7, 7)):
        assert tab[k, i] == pytest.approx(m.cond_variance(k, i), abs=1e-14)


def test_bundle_bytes_roundtrip(fbm):
    data = fbm.to_bytes()
    back = gp.PathBundle.from_bytes(data)
    assert back.n_paths == fbm.n_paths and back.hurst == fbm.hurst
    assert np.array_equal(back.fbm_values, fbm.fbm_values)
    assert np.array_equal(back.w_increments, fbm.w_increments)
