import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from grwp.stats import (chi_square_hist, exponential_cdf, ks_critical, ks_one_sample,
                        ks_statistic, ks_two_sample, ks_two_sample_statistic, normal_cdf,
                        uniform_cdf)


def test_ks_threshold_formula():
    x = np.random.default_rng(0).random(10_000)
    assert ks_one_sample(x, uniform_cdf).threshold == pytest.approx(0.01628)


def test_ks_self_consistent():
    x = np.random.default_rng(1).normal(size=10_000)
    assert ks_one_sample(x, normal_cdf).passed


def test_ks_detects_shift():
    x = np.random.default_rng(2).normal(0.5, 1.0, size=10_000)
    assert not ks_one_sample(x, normal_cdf).passed


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=10, max_size=200))
def test_ks_statistic_matches_scipy(xs):
    ours = ks_statistic(xs, sps.norm.cdf)
    theirs = sps.kstest(xs, "norm").statistic
    assert ours == pytest.approx(theirs, abs=1e-12)


def test_ks_needs_ten_samples():
    with pytest.raises(ValueError):
        ks_one_sample(np.zeros(9), uniform_cdf)


def test_two_sample_threshold():
    rng = np.random.default_rng(3)
    res = ks_two_sample(rng.normal(size=10_000), rng.normal(size=10_000))
    assert res.threshold == pytest.approx(0.02302, abs=1e-5)
    assert res.passed


def test_two_sample_power():
    rng = np.random.default_rng(4)
    assert not ks_two_sample(rng.normal(0, 1, 10_000), rng.normal(1, 1, 10_000)).passed


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=10, max_size=80),
       st.lists(st.floats(-5, 5), min_size=10, max_size=80))
def test_two_sample_statistic_matches_scipy(a, b):
    ours = ks_two_sample_statistic(a, b)
    theirs = sps.ks_2samp(a, b, method="asymp").statistic
    assert ours == pytest.approx(theirs, abs=1e-12)


def test_two_sample_identical_is_zero():
    a = np.random.default_rng(5).random(50)
    assert ks_two_sample(a, a).statistic == 0.0


def test_chi_square_exact_fit():
    probs = np.full(16, 1 / 16)
    res = chi_square_hist(probs * 10_000, probs)
    assert res.statistic == 0.0 and res.passed


def test_chi_square_critical_value():
    probs = np.full(16, 1 / 16)
    res = chi_square_hist(probs * 10_000, probs)
    assert res.aux["dof"] == 15
    assert res.threshold == pytest.approx(30.578, abs=1e-3)


def test_chi_square_power():
    obs = np.full(16, 10_000 / 16)
    obs[3] *= 2
    assert not chi_square_hist(obs, np.full(16, 1 / 16)).passed


def test_chi_square_merges_small_bins():
    probs = np.array([0.001, 0.001, 0.498, 0.5])
    res = chi_square_hist(np.array([0, 1, 499, 500]), probs)
    assert res.aux["bins"] == 2


def test_chi_square_rejects_zero_expectation():
    with pytest.raises(ValueError):
        chi_square_hist([1, 2, 3], [0, 0, 0])


def test_cdf_helpers():
    assert np.allclose(uniform_cdf([-1, 0.25, 2]), [0, 0.25, 1])
    assert normal_cdf(0.0) == 0.5
    f = exponential_cdf(2.0)
    assert f(-1.0) == 0.0
    assert f(0.5) == pytest.approx(1 - math.exp(-1))


def test_critical_values():
    assert ks_critical(0.01) == 1.628
    assert ks_critical(0.02) == pytest.approx(1.517, abs=1e-3)
