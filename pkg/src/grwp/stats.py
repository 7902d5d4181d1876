"""Distributional tests used by the verification experiments.

All tests run at alpha = 0.01 unless told otherwise.  KS thresholds use the
asymptotic critical value c(alpha) / sqrt(n_eff).
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import special, stats

from .core import StatTestResult

ALPHA = 0.01
_KS_TABLE = {0.01: 1.628, 0.05: 1.358, 0.10: 1.224}


def ks_critical(alpha: float = ALPHA) -> float:
    if alpha in _KS_TABLE:
        return _KS_TABLE[alpha]
    return math.sqrt(-0.5 * math.log(alpha / 2))


def ks_statistic(samples, cdf: Callable) -> float:
    x = np.sort(np.asarray(samples, float))
    n = x.size
    f = np.asarray(cdf(x), float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_one_sample(samples, cdf: Callable, name: str = "ks_one_sample",
                  alpha: float = ALPHA, asserted: bool = True) -> StatTestResult:
    """D_n = sup |F_n - F|; passes iff D_n < c(alpha) / sqrt(n)."""
    samples = np.asarray(samples, float)
    n = samples.size
    if n < 10:
        raise ValueError(f"{name}: need at least 10 samples, got {n}")
    d = ks_statistic(samples, cdf)
    thr = ks_critical(alpha) / math.sqrt(n)
    return StatTestResult(name, n, d, thr, d < thr, asserted=asserted,
                          aux={"mean": float(samples.mean()), "std": float(samples.std(ddof=1))})


def ks_two_sample_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, name: str = "ks_two_sample", alpha: float = ALPHA,
                  asserted: bool = True) -> StatTestResult:
    """D = sup |F_a - F_b|; passes iff D < c(alpha) sqrt((n_a + n_b) / (n_a n_b))."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size < 10 or b.size < 10:
        raise ValueError(f"{name}: need at least 10 samples per side")
    d = ks_two_sample_statistic(a, b)
    thr = ks_critical(alpha) * math.sqrt((a.size + b.size) / (a.size * b.size))
    return StatTestResult(name, a.size + b.size, d, thr, d < thr, asserted=asserted,
                          aux={"n_a": int(a.size), "n_b": int(b.size),
                               "mean_a": float(a.mean()), "mean_b": float(b.mean())})


def _merge_small_bins(observed: np.ndarray, expected: np.ndarray, minimum: float = 5.0):
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= minimum:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp:
            obs[-1] += acc_o
            exp[-1] += acc_e
        else:
            obs.append(acc_o)
            exp.append(acc_e)
    return np.asarray(obs), np.asarray(exp)


def chi_square_hist(observed, expected_probs, name: str = "chi_square",
                    alpha: float = ALPHA, asserted: bool = True) -> StatTestResult:
    """Pearson chi-square against expected bin probabilities.

    Adjacent bins are merged until every expected count reaches 5.
    """
    observed = np.asarray(observed, float)
    probs = np.asarray(expected_probs, float)
    if probs.sum() <= 0:
        raise ValueError(f"{name}: all-zero expectations")
    n = observed.sum()
    obs, exp = _merge_small_bins(observed, probs / probs.sum() * n)
    dof = len(obs) - 1
    if dof < 1:
        raise ValueError(f"{name}: fewer than two usable bins")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    thr = float(stats.chi2.ppf(1 - alpha, dof))
    return StatTestResult(name, int(n), stat, thr, stat < thr, asserted=asserted,
                          aux={"dof": dof, "bins": len(obs)})


def uniform_cdf(x):
    return np.clip(np.asarray(x, float), 0.0, 1.0)


def normal_cdf(x, mean: float = 0.0, std: float = 1.0):
    return special.ndtr((np.asarray(x, float) - mean) / std)


def exponential_cdf(rate: float):
    return lambda x: -np.expm1(-rate * np.clip(np.asarray(x, float), 0.0, None))
