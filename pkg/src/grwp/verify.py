"""Ensemble experiments checking the distributional claims of the model.

Each ``verify_*`` function accepts precomputed ensemble results so a single
run can feed several experiments; missing results are simulated on demand.
Every function returns a list of :class:`StatTestResult`.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .config import SimConfig
from .core import Mode, StatTestResult, marginal_cdf_callable
from .ensemble import EnsembleResult, initial_wavefunction, run_ensemble
from .schrodinger import make_plan, propagate
from .stats import (chi_square_hist, exponential_cdf, ks_one_sample, ks_two_sample, normal_cdf,
                    uniform_cdf)

SUITES = ("equivariance", "centers", "proximity", "conditional", "rate", "all")
MIN_SAMPLES = 10


class SuiteError(ValueError):
    """A suite cannot run on the given config."""


def with_snapshot(config: SimConfig) -> SimConfig:
    if config.run.snapshot_times:
        return config
    return config.replace(snapshot_times=[config.run.t_final])


def _ensure(config: SimConfig, result: Optional[EnsembleResult], workers: int,
            **kw) -> EnsembleResult:
    return result if result is not None else run_ensemble(config, workers=workers, **kw)


def verify_equivariance(config: SimConfig, result: Optional[EnsembleResult] = None,
                        workers: int = 1, sampling_psi=None) -> list[StatTestResult]:
    """|psi_t|^2 law of Q(t) at every snapshot time, one test per axis.

    Without collapses all trajectories share psi_t: pooled positions are
    tested against the quadrature CDF of the separately propagated psi_t.
    With collapses each trajectory has its own psi_t, so the pooled
    per-trajectory PIT values are tested against Uniform(0, 1).
    """
    config = with_snapshot(config)
    result = _ensure(config, result, workers, sampling_psi=sampling_psi)
    recs = result.survivors
    if len(recs) < MIN_SAMPLES:
        raise SuiteError("too few surviving trajectories")
    times = config.run.snapshot_times
    shared = not (config.mode.collapses and config.collapse_rate > 0)
    out = []
    if shared:
        plan = make_plan(config.params, config.grid, config.run.dt)
        states = propagate(initial_wavefunction(config), plan, times)
    for s, t in enumerate(times):
        for k in range(config.grid.ndim):
            name = f"equivariance[t={t:g},q{k + 1}]"
            if shared:
                q = np.array([r.snapshots[s, k] for r in recs])
                out.append(ks_one_sample(q, marginal_cdf_callable(states[s], k), name))
            else:
                u = np.array([r.diagnostics["snapshot_pit"][s, k] for r in recs])
                out.append(ks_one_sample(u, uniform_cdf, name + "(pit)"))
    return out


def collapse_centers(result: EnsembleResult, k: int) -> np.ndarray:
    """Centers of every trajectory's k-th collapse, shape (n, d)."""
    xs = [ev.center for _, ev in result.events() if ev.k == k]
    return np.asarray(xs, float).reshape(len(xs), -1)


def _same_but_mode(a: SimConfig, b: SimConfig) -> bool:
    ra, rb = a.to_raw(), b.to_raw()
    ra["run"].pop("mode")
    rb["run"].pop("mode")
    return ra == rb


def compare_centers(result_a: EnsembleResult, result_b: EnsembleResult, label: str,
                    collapse_indices=(1, 2), asserted: bool = True) -> list[StatTestResult]:
    out = []
    for k in collapse_indices:
        xa, xb = collapse_centers(result_a, k), collapse_centers(result_b, k)
        for c in range(xa.shape[1]):
            out.append(ks_two_sample(xa[:, c], xb[:, c], f"{label}[k={k},X{c + 1}]",
                                     asserted=asserted))
    return out


def verify_center_equivalence(config_grw: SimConfig, config_grwp: SimConfig,
                              result_grw: Optional[EnsembleResult] = None,
                              result_grwp: Optional[EnsembleResult] = None,
                              workers: int = 1) -> list[StatTestResult]:
    """Two-sample KS of first- and second-collapse centers, GRW vs GRWp mode."""
    if not _same_but_mode(config_grw, config_grwp):
        raise SuiteError("center comparison needs configs that differ only in mode")
    result_grw = _ensure(config_grw, result_grw, workers)
    result_grwp = _ensure(config_grwp, result_grwp, workers)
    return compare_centers(result_grw, result_grwp, "centers_grw_vs_grwp")


def flash_offsets(result: EnsembleResult) -> np.ndarray:
    """(X - Q_i(T)) / sigma for every event, shape (n, d)."""
    sigma = result.config.params.sigma
    rows = [(np.asarray(ev.center) - ev.particle_position) / sigma for _, ev in result.events()]
    return np.asarray(rows, float).reshape(len(rows), -1)


def verify_flash_proximity(config: SimConfig, result: Optional[EnsembleResult] = None,
                           workers: int = 1) -> list[StatTestResult]:
    """Pooled scaled offsets against N(0, 1), per component.

    Asserted only in grwp mode.  Pinned mode adds an exact-zero check of the
    offsets instead.
    """
    result = _ensure(config, result, workers)
    z = flash_offsets(result)
    if len(z) < MIN_SAMPLES:
        raise SuiteError("too few collapse events")
    grwp = config.mode is Mode.GRWP
    out = []
    max_abs = float(np.max(np.abs(z)))
    for c in range(z.shape[1]):
        res = ks_one_sample(z[:, c], normal_cdf, f"flash_proximity[Z{c + 1}]", asserted=grwp)
        out.append(StatTestResult(res.name, res.n, res.statistic, res.threshold, res.passed,
                                  asserted=grwp, aux=dict(res.aux, max_abs_offset=max_abs)))
    if config.mode is Mode.PINNED:
        tiny = float(np.nextafter(0.0, 1.0))
        out.append(StatTestResult("pinned_offsets_zero", len(z), max_abs, tiny, max_abs < tiny))
    return out


def verify_conditional_pit(config: SimConfig, result: Optional[EnsembleResult] = None,
                           collapse_index: int = 1, workers: int = 1) -> list[StatTestResult]:
    """Uniformity of U = F_{T+}(Q_i(T)) right after each trajectory's k-th collapse.

    F_{T+} is the post-collapse marginal CDF on the collapsed particle's
    first coordinate.
    """
    if not config.mode.collapses:
        raise SuiteError("conditional suite requires a collapse mode")
    result = _ensure(config, result, workers)
    u = np.array([ev.pit for _, ev in result.events() if ev.k == collapse_index])
    if len(u) < MIN_SAMPLES:
        raise SuiteError("too few collapse events")
    return [ks_one_sample(u, uniform_cdf,
                          f"conditional_pit[{config.mode.value},k={collapse_index}]")]


def collapse_gaps(result: EnsembleResult) -> tuple[np.ndarray, int]:
    """All waiting-time draws: realized gaps plus each trajectory's overshoot.

    Keeping the draw that overshot t_final makes the pooled sample an
    unbiased (optionally stopped) sample of the waiting-time law; dropping
    it would bias toward short gaps.
    """
    gaps, censored = [], 0
    for rec in result.survivors:
        times = [0.0] + [ev.t for ev in rec.events]
        if rec.pending_collapse is not None:
            times.append(rec.pending_collapse)
            censored += 1
        gaps.extend(np.diff(times).tolist())
    return np.asarray(gaps), censored


def verify_collapse_rate(config: SimConfig, result: Optional[EnsembleResult] = None,
                         workers: int = 1) -> list[StatTestResult]:
    """Waiting times against Exponential(N lambda); labels against uniform."""
    if not (config.mode.collapses and config.params.lam > 0):
        raise SuiteError("rate suite requires lambda > 0")
    result = _ensure(config, result, workers)
    n_part = config.grid.particle_count
    rate = n_part * config.params.lam
    gaps, censored = collapse_gaps(result)
    ks = ks_one_sample(gaps, exponential_cdf(rate), "collapse_rate[waiting_times]")
    mean = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(gaps.size))
    out = [StatTestResult(ks.name, ks.n, ks.statistic, ks.threshold, ks.passed,
                          aux={"mean": mean, "se": se, "expected_mean": 1 / rate,
                               "overshoot_draws": censored})]
    if n_part > 1:
        labels = np.array([ev.particle for _, ev in result.events()])
        counts = np.bincount(labels, minlength=n_part)
        out.append(chi_square_hist(counts, np.full(n_part, 1.0 / n_part),
                                   "collapse_rate[labels]"))
    return out


def run_suite(name: str, config: SimConfig, workers: int = 1,
              cache: Optional[dict] = None) -> list[StatTestResult]:
    """Run one named suite (or ``all``) on ``config``.

    ``cache`` maps modes to finished ensembles and is filled as runs
    complete, so suites share simulations.
    """
    if name not in SUITES:
        raise SuiteError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    cache = {} if cache is None else cache
    config = with_snapshot(config)

    def ensemble(mode: Mode) -> EnsembleResult:
        if mode not in cache:
            cache[mode] = run_ensemble(config.replace(mode=mode.value), workers=workers)
        return cache[mode]

    if name == "rate" and not (config.mode.collapses and config.params.lam > 0):
        raise SuiteError("rate suite requires lambda > 0")
    if name == "conditional" and not config.mode.collapses:
        raise SuiteError("conditional suite requires a collapse mode")

    out: list[StatTestResult] = []
    if name in ("equivariance", "all"):
        out += verify_equivariance(config, ensemble(config.mode))
    if name in ("centers", "all"):
        grw, grwp = config.replace(mode="grw"), config.replace(mode="grwp")
        out += verify_center_equivalence(grw, grwp, ensemble(Mode.GRW), ensemble(Mode.GRWP))
    if name in ("proximity", "all"):
        out += verify_flash_proximity(config.replace(mode="grwp"), ensemble(Mode.GRWP))
    if name in ("conditional", "all") and config.mode.collapses:
        for k in (1, 2):
            out += verify_conditional_pit(config, ensemble(config.mode), k)
    if name in ("rate", "all") and config.mode.collapses and config.params.lam > 0:
        out += verify_collapse_rate(config, ensemble(config.mode))
    return out
