"""Collapse timing, the Gaussian localization operator and center selection."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .core import (Configuration, GridSpec, WaveFunction, as_array, draw_from_density, like)

MIN_NORM_CONST = 1e-300


class VoidCollapseError(ArithmeticError):
    """Collapse center sits where |psi|^2 is numerically zero."""


class CollapseSchedule(NamedTuple):
    time: float
    particle: int


def gaussian_g(q, sigma: float):
    """Isotropic Gaussian density (2 pi sigma^2)^(-d/2) exp(-|q|^2 / 2 sigma^2).

    ``d`` is the length of the last axis of ``q`` (a scalar counts as d=1).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    q = np.asarray(q, float)
    if q.ndim == 0:
        q = q[None]
    d = q.shape[-1]
    r2 = np.sum(q * q, axis=-1)
    return (2 * math.pi * sigma ** 2) ** (-d / 2) * np.exp(-r2 / (2 * sigma ** 2))


def next_collapse(rng: np.random.Generator, n_particles: int, lam: float,
                  t_now: float) -> CollapseSchedule:
    """Next event of N superposed rate-lambda Poisson processes."""
    if not lam > 0:
        raise ValueError("lambda must be positive; bohm_only runs never schedule collapses")
    wait = rng.exponential(1.0 / (n_particles * lam))
    return CollapseSchedule(t_now + wait, int(rng.integers(n_particles)))


def _sqrt_g_factor(grid: GridSpec, i: int, center: np.ndarray, sigma: float) -> np.ndarray:
    """sqrt(g(q_i - X)) broadcast over the full configuration grid."""
    mesh = grid.mesh()
    d = grid.spatial_dim
    log_f = 0.0
    for c, k in enumerate(grid.particle_axes(i)):
        log_f = log_f - (mesh[k] - center[c]) ** 2 / (4 * sigma ** 2)
    return (2 * math.pi * sigma ** 2) ** (-d / 4) * np.exp(log_f)


def apply_collapse(psi, i: int, center, sigma: float, grid: Optional[GridSpec] = None,
                   check: bool = True):
    """Multiply psi by sqrt(g(q_i - X)) and renormalize.

    Returns ``(psi_after, C)`` where ``C`` is the norm of the multiplied
    state, so ``C**2`` is the center density at ``X``.
    """
    grid = grid or psi.grid
    arr = as_array(psi)
    center = np.atleast_1d(np.asarray(center, float))
    if center.shape != (grid.spatial_dim,) or not np.all(np.isfinite(center)):
        raise ValueError("collapse center must be a finite d-vector")
    out = arr * _sqrt_g_factor(grid, i, center, sigma)
    c = math.sqrt(float(np.sum(np.abs(out) ** 2)) * grid.cell_volume)
    if not c >= MIN_NORM_CONST:
        if check:
            raise VoidCollapseError(f"normalization constant {c:.3g} underflows")
        return like(psi, out), c
    return like(psi, out / c), c


def collapse_density_rho(psi, i: int, x, sigma: float, grid: Optional[GridSpec] = None) -> float:
    """Grid quadrature of the center density: int |psi|^2 g(q_i - x) dq.

    The q_i-marginal of |psi|^2 is formed first and then integrated against
    g, so the summation path differs from the one inside apply_collapse.
    """
    grid = grid or psi.grid
    dens = np.abs(as_array(psi)) ** 2
    own = list(grid.particle_axes(i))
    others = tuple(k for k in range(grid.ndim) if k not in own)
    marg = dens.sum(axis=others) if others else dens
    x = np.atleast_1d(np.asarray(x, float))
    nodes = np.stack(np.meshgrid(*[grid.axis_nodes(k) for k in own], indexing="ij"), axis=-1)
    g = gaussian_g(nodes - x, sigma)
    return float(np.sum(marg * g) * grid.cell_volume)


def choose_center_grwp(q, i: int, sigma: float, rng: Optional[np.random.Generator],
                       d: Optional[int] = None, force_zero: bool = False):
    """X = Q_i + Z with Z ~ g drawn fresh; ``force_zero`` pins Z = 0 (test hook)."""
    if isinstance(q, Configuration):
        qi = np.asarray(q.positions[i], float)
    else:
        q = np.asarray(q, float)
        qi = q[i * d:(i + 1) * d]
    if force_zero:
        z = np.zeros_like(qi)
    else:
        z = rng.normal(0.0, sigma, size=qi.shape)
    return qi + z, z


def choose_center_grw(psi: WaveFunction, i: int, sigma: float, rng: np.random.Generator,
                      cdf: Optional[np.ndarray] = None):
    """Draw X from the center density via its mixture form.

    A configuration q is drawn from |psi|^2 (cell sampling plus jitter),
    then X = q_i + Z with Z ~ g.  Returns ``(X, Z)``.
    """
    grid = psi.grid
    u = rng.random()
    jitter = rng.random(grid.ndim)
    q = draw_from_density(psi.density(), grid, u, jitter, cdf=cdf)
    d = grid.spatial_dim
    z = rng.normal(0.0, sigma, size=d)
    return q[i * d:(i + 1) * d] + z, z


def choose_center_pinned(q, i: int, d: Optional[int] = None):
    """X = Q_i exactly, recorded Z = 0; consumes no randomness."""
    if isinstance(q, Configuration):
        qi = np.array(q.positions[i], float)
    else:
        qi = np.array(np.asarray(q, float)[i * d:(i + 1) * d])
    return qi, np.zeros_like(qi)
