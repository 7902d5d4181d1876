import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from grwp.collapse import (VoidCollapseError, apply_collapse, choose_center_grw,
                           choose_center_grwp, choose_center_pinned, collapse_density_rho,
                           gaussian_g, next_collapse)
from grwp.core import Configuration, GridSpec, WaveFunction, marginal_cdf_callable
from grwp.schrodinger import build_gaussian_packet, uniform_wavefunction
from grwp.stats import chi_square_hist, ks_one_sample

from conftest import grid_1d


def test_gaussian_g_origin_values():
    assert gaussian_g(np.zeros(3), 1.0) == pytest.approx((2 * math.pi) ** -1.5, rel=1e-12)
    assert gaussian_g(0.0, 0.5) == pytest.approx(0.7978845608, rel=1e-9)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_gaussian_g_normalized(d):
    sigma, h = 0.5, 0.05
    axis = np.arange(-3.0, 3.0, h)  # 12 sigma wide
    pts = np.stack(np.meshgrid(*[axis] * d, indexing="ij"), axis=-1)
    assert abs(np.sum(gaussian_g(pts, sigma)) * h ** d - 1) < 1e-8


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=3), st.floats(0.01, 5))
def test_gaussian_g_symmetric(q, sigma):
    q = np.asarray(q)
    assert gaussian_g(q, sigma) == gaussian_g(-q, sigma)


def test_gaussian_g_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_g(0.0, 0.0)


def test_next_collapse_survival():
    rng = np.random.default_rng(0)
    waits = np.array([next_collapse(rng, 1, 1.0, 0.0).time for _ in range(100_000)])
    assert abs(np.mean(waits > 1) - math.exp(-1)) < 0.005


def test_next_collapse_rate_additivity():
    rng = np.random.default_rng(1)
    waits = np.array([next_collapse(rng, 2, 1.0, 3.0).time - 3.0 for _ in range(100_000)])
    se = waits.std(ddof=1) / math.sqrt(waits.size)
    assert abs(waits.mean() - 0.5) < 3 * se
    assert waits.min() > 0


def test_next_collapse_labels_uniform():
    rng = np.random.default_rng(2)
    labels = np.array([next_collapse(rng, 3, 1.0, 0.0).particle for _ in range(100_000)])
    freq = np.bincount(labels, minlength=3) / labels.size
    assert np.all(np.abs(freq - 1 / 3) < 0.01)


def test_next_collapse_needs_positive_rate():
    with pytest.raises(ValueError):
        next_collapse(np.random.default_rng(), 1, 0.0, 0.0)


def moments(psi):
    x = psi.grid.axis_nodes(0)
    p = psi.density() * psi.grid.cell_volume
    mean = np.sum(x * p)
    return mean, np.sum((x - mean) ** 2 * p)


def test_gaussian_product_posterior(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    post, c = apply_collapse(psi, 0, [1.0], 0.5)
    mean, var = moments(post)
    assert abs(var - 0.2) < 1e-6
    assert abs(mean - 0.8) < 1e-6
    assert abs(post.norm() - 1) < 1e-12


def test_c_squared_is_center_density(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.4, 1.3, 0.7)
    for x in (-2.0, 0.0, 0.33, 3.5):
        _, c = apply_collapse(psi, 0, [x], 0.5)
        assert abs(c ** 2 - collapse_density_rho(psi, 0, x, 0.5)) < 1e-10


def test_collapse_acts_on_one_particle():
    grid = GridSpec(2, 1, (-10.0, -10.0), (10.0, 10.0), (64, 64))
    psi = build_gaussian_packet(grid, [0.0, 1.0], [1.0, 1.0], [0.0, 0.0])
    post, c = apply_collapse(psi, 1, [2.0], 0.5)
    assert abs(post.norm() - 1) < 1e-12
    assert abs(c ** 2 - collapse_density_rho(psi, 1, [2.0], 0.5)) < 1e-10
    # particle 1's marginal is untouched for a product state
    m0_before = psi.density().sum(axis=1)
    m0_after = post.density().sum(axis=1)
    assert np.max(np.abs(m0_before - m0_after)) < 1e-12


def test_void_collapse():
    grid = grid_1d()
    psi = build_gaussian_packet(grid, -10.0, 0.3, 0.0)
    with pytest.raises(VoidCollapseError):
        apply_collapse(psi, 0, [15.0], 0.05)


def test_collapse_rejects_wrong_center_shape(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        apply_collapse(psi, 0, [0.0, 1.0], 0.5)


def test_grwp_zero_hook():
    q = Configuration(np.array([[0.25], [-1.5]]))
    x, z = choose_center_grwp(q, 1, 0.5, None, force_zero=True)
    assert x[0] == -1.5 and z[0] == 0.0


def test_grwp_offsets_are_gaussian():
    rng = np.random.default_rng(3)
    sigma, n = 0.5, 100_000
    q = np.array([0.7])
    z = np.array([choose_center_grwp(q, 0, sigma, rng, d=1)[0][0] - 0.7 for _ in range(n)])
    assert abs(z.mean()) < 3 * sigma / math.sqrt(n)
    assert abs(z.std(ddof=1) / sigma - 1) < 0.01
    assert ks_one_sample(z / sigma, sps.norm.cdf).statistic < 0.006


def test_grwp_z_independent_in_sequence():
    rng = np.random.default_rng(4)
    z = np.array([choose_center_grwp(np.zeros(2), 0, 0.5, rng, d=2)[1] for _ in range(20_000)])
    for c in range(2):
        s = z[:, c]
        r = np.corrcoef(s[:-1], s[1:])[0, 1]
        assert abs(r) < 3 / math.sqrt(s.size)


def _grw_draws(psi, sigma, n, seed):
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(psi.density().ravel())
    return np.array([choose_center_grw(psi, 0, sigma, rng, cdf)[0][0] for _ in range(n)])


def test_grw_tiny_sigma_tracks_marginal(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.5, 1.2, 0.0)
    sigma = canon_grid.spacing[0] / 100
    x = _grw_draws(psi, sigma, 10_000, 5)
    assert ks_one_sample(x, marginal_cdf_callable(psi, 0)).statistic < 0.025


def test_grw_gaussian_convolution(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    x = _grw_draws(psi, 0.5, 10_000, 6)
    assert ks_one_sample(x, sps.norm(0, math.sqrt(1.25)).cdf).statistic < 0.02


def test_grw_histogram_matches_center_density(canon_grid):
    psi = build_gaussian_packet(canon_grid, -0.5, 0.8, 1.0)
    x = _grw_draws(psi, 0.5, 100_000, 7)
    edges = np.linspace(-5, 4, 65)
    counts, _ = np.histogram(x, bins=edges)
    fine = np.linspace(-5, 4, 64 * 20 + 1)
    mids = 0.5 * (fine[1:] + fine[:-1])
    rho = np.array([collapse_density_rho(psi, 0, m, 0.5) for m in mids]) * (fine[1] - fine[0])
    probs = rho.reshape(64, 20).sum(axis=1)
    inside = counts.sum()
    res = chi_square_hist(counts, probs)
    assert inside > 0.999 * x.size
    assert res.passed


def test_pinned_is_identity():
    q = Configuration(np.array([[0.123456789], [2.5]]))
    x, z = choose_center_pinned(q, 0)
    assert x[0] == 0.123456789 and z[0] == 0.0
    x2, _ = choose_center_pinned(q.flat, 1, d=1)
    assert x2[0] == 2.5
    assert np.array_equal(choose_center_pinned(q, 0)[0], x)


def test_rho_uniform_is_constant():
    grid = GridSpec(1, 1, (0.0,), (20.0,), (400,))
    psi = uniform_wavefunction(grid)
    for x in (5.0, 10.0, 12.3):
        assert abs(collapse_density_rho(psi, 0, x, 0.5) - 1 / 20) < 1e-8


def test_rho_integrates_to_one(canon_grid):
    psi = build_gaussian_packet(canon_grid, 1.0, 1.0, 0.5)
    xs = canon_grid.axis_nodes(0)
    rho = np.array([collapse_density_rho(psi, 0, x, 0.5) for x in xs])
    assert abs(rho.sum() * canon_grid.spacing[0] - 1) < 1e-8


def test_rho_gaussian_convolution(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    for x in (-2.0, 0.0, 0.7, 3.0):
        expect = sps.norm(0, math.sqrt(1.25)).pdf(x)
        assert abs(collapse_density_rho(psi, 0, x, 0.5) - expect) < 1e-8
