"""Domain types shared by every stage of the simulator.

Configuration space is a periodic grid of ``D = N * d`` axes.  Particle ``i``
owns axes ``i*d .. i*d + d - 1``; a configuration is stored flat as a
length-``D`` vector in the same order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

MAX_CONFIG_AXES = 3
MIN_POINTS_PER_AXIS = 8
NORM_TOLERANCE = 1e-9

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


class Mode(str, enum.Enum):
    GRW = "grw"
    GRWP = "grwp"
    PINNED = "pinned"
    BOHM_ONLY = "bohm_only"

    @property
    def collapses(self) -> bool:
        return self is not Mode.BOHM_ONLY


# stable integer tags mixed into per-trajectory streams
MODE_CODES = {Mode.GRW: 1, Mode.GRWP: 2, Mode.PINNED: 3, Mode.BOHM_ONLY: 4}


@dataclass(frozen=True)
class PotentialSpec:
    """Real potential V on configuration space.

    ``kind`` is ``"zero"``, ``"harmonic"`` (``omega`` holds one angular
    frequency per spatial dimension) or ``"tabulated"`` (``values`` holds the
    row-major node values, ``file`` the source it was read from).
    """

    kind: str = "zero"
    omega: tuple[float, ...] = ()
    values: Optional[tuple[float, ...]] = None
    file: Optional[str] = None


@dataclass(frozen=True)
class PhysicalParams:
    hbar: float
    masses: tuple[float, ...]
    lam: float
    sigma: float
    potential: PotentialSpec = field(default_factory=PotentialSpec)

    @property
    def particle_count(self) -> int:
        return len(self.masses)


@dataclass(frozen=True)
class GridSpec:
    particle_count: int
    spatial_dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]

    @property
    def ndim(self) -> int:
        return self.particle_count * self.spatial_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.points)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper, float) - np.asarray(self.lower, float)

    @property
    def spacing(self) -> np.ndarray:
        return self.widths / np.asarray(self.points, float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_nodes(self, k: int) -> np.ndarray:
        return self.lower[k] + self.spacing[k] * np.arange(self.points[k])

    def mesh(self) -> list[np.ndarray]:
        """Node coordinates per axis, broadcastable against the grid shape."""
        out = []
        for k in range(self.ndim):
            shape = [1] * self.ndim
            shape[k] = self.points[k]
            out.append(self.axis_nodes(k).reshape(shape))
        return out

    def particle_axes(self, i: int) -> range:
        d = self.spatial_dim
        return range(i * d, (i + 1) * d)

    def particle_of_axis(self, k: int) -> int:
        return k // self.spatial_dim

    def wrap(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower, float)
        return lo + np.mod(np.asarray(x, float) - lo, self.widths)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, float)
        return bool(np.all((x >= np.asarray(self.lower)) & (x < np.asarray(self.upper))))


@dataclass(frozen=True, eq=False)
class WaveFunction:
    amplitudes: np.ndarray
    grid: GridSpec

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density()) * self.grid.cell_volume))

    def check(self, tol: float = NORM_TOLERANCE) -> None:
        if not np.all(np.isfinite(self.amplitudes)):
            raise FloatingPointError("wave function has non-finite amplitudes")
        if abs(self.norm() - 1.0) > tol:
            raise ValueError(f"wave function norm {self.norm():.15g} is not 1")


@dataclass(frozen=True, eq=False)
class Configuration:
    """Actual particle positions, shape ``(N, d)``, at time ``t``."""

    positions: np.ndarray
    t: float = 0.0

    @property
    def flat(self) -> np.ndarray:
        return np.asarray(self.positions, float).reshape(-1)

    @classmethod
    def from_flat(cls, q: np.ndarray, grid: GridSpec, t: float = 0.0) -> "Configuration":
        q = np.asarray(q, float)
        return cls(q.reshape(grid.particle_count, grid.spatial_dim).copy(), t)


@dataclass(frozen=True)
class CollapseEvent:
    """One collapse ("flash").  ``particle`` is 0-based.

    ``position`` is the full flat configuration at the collapse time,
    ``pit`` the post-collapse marginal CDF of the collapsed particle's first
    coordinate evaluated at its actual position, ``rho`` the direct
    quadrature of the center density at ``center``.
    """

    k: int
    t: float
    particle: int
    center: tuple[float, ...]
    offset: tuple[float, ...]
    norm_const: float
    mode: Mode
    position: tuple[float, ...] = ()
    pit: float = float("nan")
    rho: float = float("nan")

    @property
    def particle_position(self) -> np.ndarray:
        d = len(self.center)
        return np.asarray(self.position[self.particle * d:(self.particle + 1) * d])


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    index: int
    seed: int
    events: tuple[CollapseEvent, ...]
    snapshot_times: tuple[float, ...]
    snapshots: np.ndarray  # (len(snapshot_times), D)
    diagnostics: Mapping[str, Any]
    pending_collapse: Optional[float] = None

    @property
    def aborted(self) -> Optional[str]:
        return self.diagnostics.get("abort")


@dataclass(frozen=True)
class StatTestResult:
    """Outcome of one distributional test.

    ``direction`` is ``"below"`` when the test passes for
    ``statistic < threshold`` and ``"above"`` for ``statistic > threshold``.
    Exploratory results (``asserted=False``) never gate anything.
    """

    name: str
    n: int
    statistic: float
    threshold: float
    passed: bool
    direction: str = "below"
    asserted: bool = True
    aux: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.statistic < self.threshold if self.direction == "below"
                    else self.statistic > self.threshold)
        if bool(self.passed) != bool(expected):
            raise ValueError(f"{self.name}: pass flag disagrees with statistic")

    def report_line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        if not self.asserted:
            verdict += "(exploratory)"
        op = "<" if self.direction == "below" else ">"
        return (f"{self.name:<48s} n={self.n:<8d} stat={self.statistic:<12.6g} "
                f"{op} {self.threshold:<12.6g} {verdict}")


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN64) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_trajectory_seed(master_seed: int, trajectory_index: int) -> int:
    """64-bit seed for one trajectory.

    ``splitmix64(splitmix64(master) + GOLDEN * index)``.  Both the additive
    step (odd multiplier) and the finalizer are bijections of the 64-bit
    ring, so seeds are distinct across indices for a fixed master seed and
    across master seeds for a fixed index.
    """
    m = _splitmix64(int(master_seed) & _MASK64)
    return _splitmix64((m + _GOLDEN64 * int(trajectory_index)) & _MASK64)


def trajectory_streams(seed: int, mode: Mode) -> tuple[np.random.Generator, ...]:
    """Independent (initial, schedule, center) generators for one trajectory."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, MODE_CODES[Mode(mode)]])
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


# --- |psi|^2 cell sampling -------------------------------------------------
#
# Cell j is centered on node j and has width spacing.  Draws pick a cell with
# probability |psi_j|^2 * dV (renormalized) and jitter uniformly inside it, so
# the sampled law is piecewise constant with a piecewise-linear marginal CDF.


def _flat_cumsum(density: np.ndarray) -> np.ndarray:
    return np.cumsum(density.ravel())


def draw_from_density(density: np.ndarray, grid: GridSpec, u_cell: float,
                      u_jitter: np.ndarray, cdf: Optional[np.ndarray] = None) -> np.ndarray:
    """Map uniforms to one flat configuration drawn from ``density``."""
    if cdf is None:
        cdf = _flat_cumsum(density)
    total = cdf[-1]
    if not total > 0 or not np.isfinite(total):
        raise ValueError("degenerate wave function: zero total probability")
    j = int(np.searchsorted(cdf, u_cell * total, side="right"))
    j = min(j, cdf.size - 1)
    idx = np.array(np.unravel_index(j, grid.shape), float)
    x = np.asarray(grid.lower) + (idx + np.asarray(u_jitter) - 0.5) * grid.spacing
    return grid.wrap(x)


def sample_initial_configuration(psi0: WaveFunction, rng: np.random.Generator,
                                 cdf: Optional[np.ndarray] = None) -> Configuration:
    """Draw Q(0) from |psi0|^2 by cell sampling with uniform jitter.

    Consumes exactly ``1 + D`` uniforms from ``rng``.
    """
    grid = psi0.grid
    u = rng.random()
    jitter = rng.random(grid.ndim)
    q = draw_from_density(psi0.density(), grid, u, jitter, cdf=cdf)
    return Configuration.from_flat(q, grid, 0.0)


def marginal_density(density: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """Cell probabilities of one axis (trailing-grid layout, batch axes kept)."""
    nb = density.ndim - grid.ndim
    others = tuple(nb + k for k in range(grid.ndim) if k != axis)
    m = density.sum(axis=others) if others else density
    return m * grid.cell_volume


def marginal_cdf(density: np.ndarray, grid: GridSpec, axis: int, x: np.ndarray) -> np.ndarray:
    """Piecewise-linear CDF of the cell law marginal on ``axis`` at ``x``.

    ``density`` is either a single grid or a batch ``(B, *grid)`` paired with
    ``x`` of shape ``(B,)``.
    """
    p = marginal_density(density, grid, axis)
    p = p / p.sum(axis=-1, keepdims=True)
    h = grid.spacing[axis]
    edges = grid.lower[axis] + (np.arange(grid.points[axis] + 1) - 0.5) * h
    x = np.asarray(x, float)
    if p.ndim == 1:
        cum = np.concatenate([[0.0], np.cumsum(p)])
        return np.interp(x, edges, cum)
    cum = np.concatenate([np.zeros((p.shape[0], 1)), np.cumsum(p, axis=-1)], axis=-1)
    pos = np.clip((x - edges[0]) / h, 0.0, grid.points[axis])
    j = np.minimum(pos.astype(int), grid.points[axis] - 1)
    frac = pos - j
    rows = np.arange(p.shape[0])
    return cum[rows, j] + frac * p[rows, j]


def marginal_cdf_callable(psi: WaveFunction, axis: int):
    """CDF of the marginal on ``axis`` as a callable, for KS tests."""
    dens = psi.density()
    return lambda x: marginal_cdf(dens, psi.grid, axis, x)


def as_array(psi) -> np.ndarray:
    return psi.amplitudes if isinstance(psi, WaveFunction) else np.asarray(psi)


def like(template, amplitudes: np.ndarray):
    """Rewrap ``amplitudes`` in the container type of ``template``."""
    if isinstance(template, WaveFunction):
        return WaveFunction(amplitudes, template.grid)
    return amplitudes


def is_sequence(x: Any) -> bool:
    return isinstance(x, Sequence) and not isinstance(x, (str, bytes))
