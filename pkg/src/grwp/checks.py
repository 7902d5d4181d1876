"""Deterministic propagator checks against closed-form solutions."""
from __future__ import annotations

import math

import numpy as np

from .core import GridSpec, PhysicalParams, PotentialSpec, StatTestResult
from .schrodinger import (analytic_coherent_state, analytic_free_gaussian, build_gaussian_packet,
                          make_plan, propagate, step_schrodinger)

FREE_L2_TOL = 1e-6
OVERLAP_TOL = 1e-5
NORM_DRIFT_TOL = 1e-10


def canonical_grid(points: int = 512, half_width: float = 20.0) -> GridSpec:
    return GridSpec(1, 1, (-half_width,), (half_width,), (points,))


def free_l2_error(t: float = 1.0, dt: float = 0.005, s0: float = 1.0, k: float = 0.0,
                  grid: GridSpec | None = None) -> float:
    grid = grid or canonical_grid()
    params = PhysicalParams(1.0, (1.0,), 0.0, 0.5, PotentialSpec())
    psi = build_gaussian_packet(grid, 0.0, s0, k)
    (num,) = propagate(psi, make_plan(params, grid, dt), [t])
    exact = analytic_free_gaussian(t, s0, k, 1.0, 1.0, grid)
    diff = num.amplitudes - exact.amplitudes
    return math.sqrt(float(np.sum(np.abs(diff) ** 2)) * grid.cell_volume)


def coherent_overlap_deficit(omega: float = 1.0, x0: float = 2.0, dt: float = 0.005,
                             periods: int = 1, grid: GridSpec | None = None) -> float:
    """1 - |<psi_exact | psi_num>| after whole oscillator periods."""
    grid = grid or canonical_grid()
    params = PhysicalParams(1.0, (1.0,), 0.0, 0.5, PotentialSpec("harmonic", omega=(omega,)))
    t = periods * 2 * math.pi / omega
    psi0 = analytic_coherent_state(0.0, x0, omega, 1.0, 1.0, grid)
    (num,) = propagate(psi0, make_plan(params, grid, dt), [t])
    exact = analytic_coherent_state(t, x0, omega, 1.0, 1.0, grid)
    overlap = np.sum(np.conj(exact.amplitudes) * num.amplitudes) * grid.cell_volume
    return abs(1.0 - abs(overlap))


def norm_drift(steps: int = 10_000, dt: float = 0.005, grid: GridSpec | None = None) -> float:
    """max_t |‖psi_t‖ - ‖psi_0‖| over ``steps`` steps in a harmonic trap."""
    grid = grid or canonical_grid()
    params = PhysicalParams(1.0, (1.0,), 0.0, 0.5, PotentialSpec("harmonic", omega=(0.5,)))
    plan = make_plan(params, grid, dt)
    psi = build_gaussian_packet(grid, 1.0, 1.0, 0.5)
    n0 = psi.norm()
    worst = 0.0
    for _ in range(steps):
        psi = step_schrodinger(psi, plan)
        worst = max(worst, abs(psi.norm() - n0))
    return worst


def propagator_checks() -> list[StatTestResult]:
    err = free_l2_error()
    deficit = coherent_overlap_deficit()
    drift = norm_drift()
    return [
        StatTestResult("propagator_free_l2[t=1]", 1, err, FREE_L2_TOL, err < FREE_L2_TOL),
        StatTestResult("propagator_coherent_overlap_deficit[1 period]", 1, deficit, OVERLAP_TOL,
                       deficit < OVERLAP_TOL),
        StatTestResult("propagator_norm_drift[10000 steps]", 10_000, drift, NORM_DRIFT_TOL,
                       drift < NORM_DRIFT_TOL),
    ]
