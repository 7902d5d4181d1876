"""Split-step spectral propagation of the N-particle Schrodinger equation.

Every function here accepts either a :class:`WaveFunction` or a bare complex
array whose trailing axes are the grid (leading axes batch independent
wave functions).  Bare arrays come back as arrays.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import GridSpec, PhysicalParams, WaveFunction, as_array, like


def _fft_axes(grid: GridSpec) -> tuple[int, ...]:
    return tuple(range(-grid.ndim, 0))


def fft(psi: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.fftn(psi, axes=_fft_axes(grid))


def ifft(psi_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifftn(psi_hat, axes=_fft_axes(grid))


def wavenumbers(grid: GridSpec, k: int, derivative: bool = False) -> np.ndarray:
    """Angular wavenumbers of axis ``k`` shaped to broadcast over the grid.

    With ``derivative=True`` the Nyquist mode of an even axis is zeroed, the
    usual convention for odd-order spectral derivatives.
    """
    m = grid.points[k]
    kk = 2 * np.pi * np.fft.fftfreq(m, d=grid.spacing[k])
    if derivative and m % 2 == 0:
        kk[m // 2] = 0.0
    shape = [1] * grid.ndim
    shape[k] = m
    return kk.reshape(shape)


def potential_on_grid(params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    pot = params.potential
    if pot.kind == "zero":
        return np.zeros(grid.shape)
    if pot.kind == "harmonic":
        v = np.zeros(grid.shape)
        for k, x in enumerate(grid.mesh()):
            i = grid.particle_of_axis(k)
            w = pot.omega[k % grid.spatial_dim]
            v = v + 0.5 * params.masses[i] * w ** 2 * x ** 2
        return v
    if pot.kind == "tabulated":
        return np.asarray(pot.values, float).reshape(grid.shape)
    raise ValueError(f"unknown potential kind {pot.kind!r}")


@dataclass(frozen=True, eq=False)
class PropagatorPlan:
    """Precomputed phase multipliers for a Strang step of size ``dt``.

    ``kinetic`` is ``exp(-i dt sum_k hbar k_k^2 / 2 m_k)`` on the frequency
    grid, ``potential_half`` is ``exp(-i V dt / 2 hbar)`` or None when V = 0.
    Factors for ``dt / 2`` are cached too (the midpoint state needs them).
    """

    grid: GridSpec
    hbar: float
    dt: float
    kinetic_freq: np.ndarray  # sum_k hbar k_k^2 / 2 m_k
    potential: Optional[np.ndarray]
    kinetic: np.ndarray
    potential_half: Optional[np.ndarray]
    _cache: dict

    def kinetic_factor(self, h) -> np.ndarray:
        return self._phase("kin", self.kinetic_freq, h)

    def potential_factor(self, h) -> Optional[np.ndarray]:
        """Phase of a potential kick lasting ``h / 2``."""
        if self.potential is None:
            return None
        return self._phase("pot", self.potential / (2 * self.hbar), h)

    def _phase(self, which: str, rate: np.ndarray, h) -> np.ndarray:
        cache = self._cache[which]
        if h is None:
            return cache[self.dt]
        h_arr = np.asarray(h, float)
        if h_arr.ndim == 0:
            hit = cache.get(float(h_arr))
            return hit if hit is not None else np.exp(-1j * float(h_arr) * rate)
        first = float(h_arr[0])
        if first in cache and np.all(h_arr == first):
            return cache[first]
        out = np.empty(h_arr.shape + rate.shape, dtype=complex)
        todo = np.ones(h_arr.shape, dtype=bool)
        for key, value in cache.items():
            rows = h_arr == key
            out[rows] = value
            todo &= ~rows
        odd = np.flatnonzero(todo)
        out[odd] = np.exp(-1j * h_arr[odd].reshape((-1,) + (1,) * rate.ndim) * rate)
        return out


def make_plan(params: PhysicalParams, grid: GridSpec, dt: float) -> PropagatorPlan:
    if not dt > 0:
        raise ValueError("dt must be positive")
    omega = np.zeros(grid.shape)
    for k in range(grid.ndim):
        m = params.masses[grid.particle_of_axis(k)]
        omega = omega + params.hbar * wavenumbers(grid, k) ** 2 / (2 * m)
    v = potential_on_grid(params, grid)
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be finite")
    potential = None if not np.any(v) else v
    cache = {"kin": {dt: np.exp(-1j * dt * omega), dt / 2: np.exp(-1j * (dt / 2) * omega)},
             "pot": {}}
    if potential is not None:
        rate = potential / (2 * params.hbar)
        cache["pot"] = {dt: np.exp(-1j * dt * rate), dt / 2: np.exp(-1j * (dt / 2) * rate)}
    return PropagatorPlan(grid, params.hbar, dt, omega, potential, cache["kin"][dt],
                          cache["pot"].get(dt), cache)


def _strang(psi: np.ndarray, plan: PropagatorPlan, h) -> np.ndarray:
    grid = plan.grid
    pot = plan.potential_factor(h)
    kin = plan.kinetic_factor(h)
    if pot is not None:
        psi = psi * pot
    out = ifft(fft(psi, grid) * kin, grid)
    if pot is not None:
        out = out * pot
    return out


def _per_row(h, psi: np.ndarray, grid: GridSpec):
    if h is None or np.ndim(h) == 0:
        return h
    h = np.asarray(h, float)
    if psi.ndim - grid.ndim != 1 or h.shape[0] != psi.shape[0]:
        raise ValueError("per-row dt needs one entry per batched wave function")
    return h


def step_schrodinger(psi, plan: PropagatorPlan, dt_override=None):
    """One Strang step: half potential kick, full kinetic drift, half kick.

    ``dt_override`` replaces ``plan.dt`` for this step (a scalar, or one
    value per batched wave function).
    """
    arr = as_array(psi)
    if dt_override is not None and np.any(np.asarray(dt_override) <= 0):
        raise ValueError("dt_override must be positive")
    out = _strang(arr, plan, _per_row(dt_override, arr, plan.grid))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite amplitude after Schrodinger step")
    return like(psi, out)


class MidpointStep(NamedTuple):
    """End state of one step plus the half-way state psi(t + h/2)."""

    mid: np.ndarray
    end: np.ndarray


def _midpoint_direct(psi: np.ndarray, plan: PropagatorPlan, h) -> MidpointStep:
    grid = plan.grid
    h_full = plan.dt if h is None else h
    h_half = np.asarray(h_full, float) / 2
    if plan.potential is None:
        # free drift: both states come from one forward transform
        spectrum = fft(psi, grid)
        mid = ifft(spectrum * plan.kinetic_factor(h_half), grid)
        end = ifft(spectrum * plan.kinetic_factor(h), grid)
    else:
        end = _strang(psi, plan, h)
        mid = _strang(psi, plan, h_half)
    return MidpointStep(mid, end)


def step_with_midpoint(psi: np.ndarray, plan: PropagatorPlan, h=None) -> MidpointStep:
    """Advance by ``h`` (default ``plan.dt``) and also return psi(t + h/2).

    ``h`` may hold one step per batched wave function; rows whose step is
    not ``plan.dt`` are recomputed separately so the common rows reuse the
    cached phase factors.  The end state is bitwise what
    :func:`step_schrodinger` returns for the same row.
    """
    h = _per_row(h, psi, plan.grid)
    if h is not None and np.ndim(h) == 1:
        regular = h == plan.dt
        if regular.all():
            h = None
        elif regular.any():
            out = _midpoint_direct(psi, plan, None)
            odd = np.flatnonzero(~regular)
            sub = _midpoint_direct(psi[odd], plan, h[odd])
            for full, part in zip(out, sub):
                full[odd] = part
            return _checked(out)
    return _checked(_midpoint_direct(psi, plan, h))


def _checked(step: MidpointStep) -> MidpointStep:
    # a sum is non-finite iff some element is (cheaper than isfinite + all)
    if not (np.isfinite(step.end.sum()) and np.isfinite(step.mid.sum())):
        raise FloatingPointError("non-finite amplitude after Schrodinger step")
    return step


STEP_SLACK = 1e-9


def step_sizes(t0: float, stop: float, dt: float):
    """Steps of ``dt`` from ``t0`` landing exactly on ``stop``.

    A remainder within ``dt * (1 + STEP_SLACK)`` is taken as the final
    (possibly partial) step, so float round-off never leaves a sliver step.
    """
    t = t0
    while t < stop:
        rem = stop - t
        if rem <= dt * (1 + STEP_SLACK):
            yield rem
            return
        yield dt
        t = t + dt


def propagate(psi, plan: PropagatorPlan, t_stops, t0: float = 0.0) -> list:
    """Evolve through increasing stop times; returns the state at each stop."""
    out = []
    t = t0
    for stop in t_stops:
        for h in step_sizes(t, stop, plan.dt):
            psi = step_schrodinger(psi, plan, None if h == plan.dt else h)
        t = stop
        out.append(psi)
    return out


def gaussian_outside_mass(grid: GridSpec, mean, width) -> float:
    """Probability mass of a product Gaussian density outside the domain."""
    inside = 1.0
    for k in range(grid.ndim):
        s, m = width[k], mean[k]
        lo = (grid.lower[k] - m) / (math.sqrt(2) * s)
        hi = (grid.upper[k] - m) / (math.sqrt(2) * s)
        inside *= 0.5 * (math.erf(hi) - math.erf(lo))
    return 1.0 - inside


def build_gaussian_packet(grid: GridSpec, mean, width, momentum) -> WaveFunction:
    """Normalized psi(x) proportional to exp(-(x - mean)^2 / 4 s0^2 + i k x).

    Scalars broadcast over all configuration axes.
    """
    mean = np.broadcast_to(np.asarray(mean, float), (grid.ndim,))
    width = np.broadcast_to(np.asarray(width, float), (grid.ndim,))
    momentum = np.broadcast_to(np.asarray(momentum, float), (grid.ndim,))
    if np.any(width <= 0):
        raise ValueError("packet width must be positive")
    if not grid.contains(mean):
        raise ValueError("packet mean lies outside the domain")
    outside = gaussian_outside_mass(grid, mean, width)
    if outside >= 1e-10:
        raise ValueError(f"packet too wide for domain: boundary mass {outside:.3g} >= 1e-10")
    log_psi = np.zeros(grid.shape, dtype=complex)
    for k, x in enumerate(grid.mesh()):
        log_psi = log_psi + (-(x - mean[k]) ** 2 / (4 * width[k] ** 2) + 1j * momentum[k] * x)
    psi = np.exp(log_psi)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)
    return WaveFunction(psi, grid)


def uniform_wavefunction(grid: GridSpec) -> WaveFunction:
    psi = np.full(grid.shape, 1.0 / math.sqrt(float(np.prod(grid.widths))), dtype=complex)
    return WaveFunction(psi, grid)


def analytic_free_gaussian(t: float, s0, k, m, hbar: float, grid: GridSpec,
                           mean=0.0) -> WaveFunction:
    """Exact free evolution of :func:`build_gaussian_packet` on the grid.

    ``m`` is one mass per particle (or a scalar).  The density on each axis
    stays Gaussian with mean ``mean + hbar k t / m`` and standard deviation
    ``s0 sqrt(1 + (hbar t / 2 m s0^2)^2)``.
    """
    s0 = np.broadcast_to(np.asarray(s0, float), (grid.ndim,))
    k = np.broadcast_to(np.asarray(k, float), (grid.ndim,))
    mean = np.broadcast_to(np.asarray(mean, float), (grid.ndim,))
    masses = np.broadcast_to(np.asarray(m, float), (grid.particle_count,))
    psi = np.ones(grid.shape, dtype=complex)
    for ax, x in enumerate(grid.mesh()):
        mass = masses[grid.particle_of_axis(ax)]
        a = 1 + 1j * hbar * t / (2 * mass * s0[ax] ** 2)
        drift = hbar * k[ax] * t / mass
        psi = psi * ((2 * np.pi * s0[ax] ** 2) ** -0.25 / np.sqrt(a)
                     * np.exp(-(x - mean[ax] - drift) ** 2 / (4 * s0[ax] ** 2 * a)
                              + 1j * k[ax] * x - 1j * hbar * k[ax] ** 2 * t / (2 * mass)))
    return WaveFunction(psi, grid)


def analytic_coherent_state(t: float, x0: float, omega: float, m: float, hbar: float,
                            grid: GridSpec) -> WaveFunction:
    """Displaced harmonic-oscillator ground state evolved exactly (1D).

    Center ``x0 cos(wt)``, momentum ``-m w x0 sin(wt)``, global phase
    ``-wt/2 - <x><p>/(2 hbar)``.
    """
    if grid.ndim != 1:
        raise ValueError("coherent state oracle is one-dimensional")
    x = grid.axis_nodes(0)
    xc = x0 * math.cos(omega * t)
    pc = -m * omega * x0 * math.sin(omega * t)
    a = m * omega / hbar
    psi = ((a / math.pi) ** 0.25
           * np.exp(-0.5 * a * (x - xc) ** 2 + 1j * pc * x / hbar
                    - 1j * (omega * t / 2 + xc * pc / (2 * hbar))))
    return WaveFunction(psi, grid)


def free_gaussian_width(t: float, s0: float, m: float = 1.0, hbar: float = 1.0) -> float:
    return s0 * math.sqrt(1 + (hbar * t / (2 * m * s0 ** 2)) ** 2)


def boundary_mass(psi, margin_cells: int, grid: Optional[GridSpec] = None):
    """|psi|^2 weight on nodes within ``margin_cells`` of any domain edge.

    Returns a float for a single wave function, an array for a batch.
    """
    if margin_cells < 1:
        raise ValueError("margin_cells must be >= 1")
    if grid is None:
        grid = psi.grid
    dens = np.abs(as_array(psi)) ** 2
    return edge_mass(dens, grid, margin_cells)


def edge_mass(density: np.ndarray, grid: GridSpec, margin_cells: int):
    axes = _fft_axes(grid)
    inner = density[(Ellipsis,) + tuple(slice(margin_cells, m - margin_cells)
                                        for m in grid.points)]
    edge = np.sum(density, axis=axes) - np.sum(inner, axis=axes)
    out = np.maximum(edge, 0.0) * grid.cell_volume
    return float(out) if np.ndim(out) == 0 else out


# --- binary dump: b"GRWPPSI1", uint32 D, D x (f64 lower, f64 upper, u32 points),
# then interleaved real/imag float64, all little-endian, row-major.

_MAGIC = b"GRWPPSI1"


def dump_wavefunction(psi: WaveFunction, path) -> None:
    grid = psi.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", grid.ndim, grid.particle_count, grid.spatial_dim))
        for k in range(grid.ndim):
            fh.write(struct.pack("<ddI", grid.lower[k], grid.upper[k], grid.points[k]))
        data = np.empty(psi.amplitudes.size * 2, dtype="<f8")
        flat = psi.amplitudes.ravel()
        data[0::2], data[1::2] = flat.real, flat.imag
        fh.write(data.tobytes())


def load_wavefunction(path) -> WaveFunction:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a wave function dump")
        ndim, n_part, d = struct.unpack("<III", fh.read(12))
        lower, upper, points = [], [], []
        for _ in range(ndim):
            lo, hi, m = struct.unpack("<ddI", fh.read(20))
            lower.append(lo)
            upper.append(hi)
            points.append(m)
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = GridSpec(n_part, d, tuple(lower), tuple(upper), tuple(points))
    amps = (data[0::2] + 1j * data[1::2]).reshape(grid.shape)
    return WaveFunction(amps, grid)
