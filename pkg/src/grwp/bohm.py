"""Bohmian guidance: velocity field from psi and trajectory integration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Configuration, GridSpec, PhysicalParams, WaveFunction, as_array
from .schrodinger import wavenumbers

REGULARIZATION = 1e-12
CLAMP_FRACTION = 0.25


@dataclass
class GuidanceCounters:
    """Running totals for the regularization/clamp diagnostics."""

    evaluations: int = 0
    clamps: int = 0
    wraps: int = 0

    def merge(self, other: "GuidanceCounters") -> None:
        self.evaluations += other.evaluations
        self.clamps += other.clamps
        self.wraps += other.wraps


class VelocityField:
    """Guidance velocities on the grid nodes of one psi or a batch of them.

    Spectral gradients of Re psi and Im psi are computed up front; the
    velocity ratio itself is formed lazily, either on every node
    (:attr:`values`, shape ``(batch..., *grid, D)``) or only on the nodes an
    interpolation needs.  ``eps`` holds the regularization used per batch row.
    """

    def __init__(self, psi: np.ndarray, grads: list, eps: np.ndarray, coefs: np.ndarray,
                 grid: GridSpec, t: float = float("nan")):
        self._psi = psi
        self._grads = grads  # per axis: (d Re psi, d Im psi), both real
        self.eps = eps
        self._coefs = coefs
        self.grid = grid
        self.t = t
        self._values = None

    @property
    def batch_shape(self) -> tuple:
        return self._psi.shape[:self._psi.ndim - self.grid.ndim]

    @staticmethod
    def _ratio(c, p, g_re, g_im, denom):
        # Im(conj(psi) grad psi) = Re psi * grad Im psi - Im psi * grad Re psi
        return c * (p.real * g_im - p.imag * g_re) / denom

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            eps = self.eps.reshape(self.batch_shape + (1,) * self.grid.ndim)
            denom = np.abs(self._psi) ** 2 + eps
            self._values = np.stack([self._ratio(c, self._psi, gr, gi, denom)
                                     for c, (gr, gi) in zip(self._coefs, self._grads)], axis=-1)
        return self._values

    def at_nodes(self, rows: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Velocities at node ``idx[b]`` of batch row ``rows[b]``; shape (B, D)."""
        if self._values is not None:
            vals = self._values if self.batch_shape else self._values[None]
            return vals[(rows,) + tuple(idx.T)]
        key = (rows,) + tuple(idx.T)
        batched = bool(self.batch_shape)
        psi = self._psi if batched else self._psi[None]
        eps = np.atleast_1d(self.eps)
        p = psi[key]
        denom = np.abs(p) ** 2 + eps[rows]
        out = np.empty(idx.shape)
        for k, (c, (gr, gi)) in enumerate(zip(self._coefs, self._grads)):
            if not batched:
                gr, gi = gr[None], gi[None]
            out[:, k] = self._ratio(c, p, gr[key], gi[key], denom)
        return out


def _real_gradients(arr: np.ndarray, grid: GridSpec) -> list:
    """Spectral gradients of Re and Im of ``arr`` along every axis.

    Real transforms keep both gradients exactly real, so a real psi gets an
    exactly zero velocity instead of FFT round-off divided by |psi|^2.
    """
    axes = tuple(range(-grid.ndim, 0))
    last = grid.points[-1] // 2 + 1
    spectra = [np.fft.rfftn(part, axes=axes) for part in (arr.real, arr.imag)]
    out = []
    for k in range(grid.ndim):
        ik = 1j * wavenumbers(grid, k, derivative=True)[..., :last]
        out.append(tuple(np.fft.irfftn(ik * s, s=grid.shape, axes=axes) for s in spectra))
    return out


def velocity_field(psi, params: PhysicalParams, grid: Optional[GridSpec] = None,
                   t: float = float("nan")) -> VelocityField:
    """v_k = (hbar / m_i) Im(conj(psi) d_k psi) / (|psi|^2 + eps) on every node.

    Gradients are spectral.  ``eps = 1e-12 * max |psi|^2`` per wave function
    keeps the ratio finite at nodes of psi.
    """
    grid = grid or psi.grid
    arr = as_array(psi)
    axes = tuple(range(-grid.ndim, 0))
    eps = REGULARIZATION * np.max(np.abs(arr) ** 2, axis=axes)
    coefs = np.array([params.hbar / params.masses[grid.particle_of_axis(k)]
                      for k in range(grid.ndim)])
    return VelocityField(arr, _real_gradients(arr, grid), np.asarray(eps), coefs, grid, t)


def _corner_weights(grid: GridSpec, q: np.ndarray):
    lo = np.asarray(grid.lower, float)
    pos = (q - lo) / grid.spacing
    base = np.floor(pos)
    frac = pos - base
    base = base.astype(np.int64)
    pts = np.asarray(grid.points)
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        c = np.asarray(corner)
        idx = np.mod(base + c, pts)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=-1)
        yield idx, w


def velocity_at(field: VelocityField, q, v_max=None,
                counters: Optional[GuidanceCounters] = None) -> np.ndarray:
    """Multilinear (periodic) interpolation of the node velocities to ``q``.

    ``q`` is a flat configuration ``(D,)`` or a batch ``(B, D)``; a field
    with a single batch row is shared by every configuration.  Components
    exceeding ``v_max`` in magnitude are clamped and counted.
    """
    if isinstance(q, Configuration):
        q = q.flat
    q = np.asarray(q, float)
    single = q.ndim == 1
    qb = q.reshape(-1, field.grid.ndim)
    batch = field.batch_shape
    shared = not batch or batch[0] == 1
    rows = np.zeros(len(qb), dtype=np.int64) if shared else np.arange(len(qb))
    out = np.zeros_like(qb)
    for idx, w in _corner_weights(field.grid, qb):
        out += w[:, None] * field.at_nodes(rows, idx)
    if v_max is not None:
        v_max = np.asarray(v_max, float)
        hit = np.abs(out) > v_max
        if hit.any():
            out = np.clip(out, -v_max, v_max)
        if counters is not None:
            counters.clamps += int(hit.sum())
    if counters is not None:
        counters.evaluations += out.size
    return out[0] if single else out


def default_v_max(grid: GridSpec, dt: float) -> np.ndarray:
    return CLAMP_FRACTION * grid.spacing / dt


def advance_trajectory(q, psi_t, psi_mid, dt, params: PhysicalParams,
                       grid: Optional[GridSpec] = None,
                       v_max=None, counters: Optional[GuidanceCounters] = None):
    """Explicit midpoint step of the guidance equation.

    k1 = v(psi_t, Q); Q_mid = Q + dt/2 k1; k2 = v(psi_mid, Q_mid);
    Q' = Q + dt k2, wrapped into the periodic domain.  ``psi_mid`` must be
    the state at t + dt/2.  ``dt`` may be one value per configuration when
    ``q`` is a batch.
    """
    grid = grid or psi_t.grid
    as_config = isinstance(q, Configuration)
    q0 = q.flat if as_config else np.asarray(q, float)
    h = np.asarray(dt, float)
    if np.any(h <= 0):
        raise ValueError("dt must be positive")
    if v_max is None:
        v_max = default_v_max(grid, float(np.min(h)))
    hcol = h[:, None] if h.ndim == 1 else h
    k1 = velocity_at(velocity_field(psi_t, params, grid), q0, v_max, counters)
    q_mid = q0 + 0.5 * hcol * k1
    k2 = velocity_at(velocity_field(psi_mid, params, grid), q_mid, v_max, counters)
    q1 = q0 + hcol * k2
    if not np.all(np.isfinite(q1)):
        raise FloatingPointError("non-finite particle position")
    outside = (q1 < np.asarray(grid.lower)) | (q1 >= np.asarray(grid.upper))
    if outside.any():
        q1 = grid.wrap(q1)
        if counters is not None:
            counters.wraps += int(outside.sum())
    if as_config:
        return Configuration.from_flat(q1, grid, q.t + float(h))
    return q1
