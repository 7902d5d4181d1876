"""Trajectory engine and Monte Carlo ensembles.

Trajectories are simulated in fixed chunks of consecutive indices, each chunk
vectorized over its trajectories.  Chunk boundaries depend only on the
trajectory index, so results do not depend on how many workers run them.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .bohm import GuidanceCounters, advance_trajectory, default_v_max
from .collapse import (MIN_NORM_CONST, apply_collapse, choose_center_grw, choose_center_grwp,
                       choose_center_pinned, collapse_density_rho, next_collapse)
from .config import SimConfig
from .core import (CollapseEvent, Mode, TrajectoryRecord, WaveFunction, derive_trajectory_seed,
                   marginal_cdf, sample_initial_configuration, trajectory_streams)
from .schrodinger import (STEP_SLACK, build_gaussian_packet, edge_mass, make_plan, step_with_midpoint,
                          uniform_wavefunction)

log = logging.getLogger(__name__)

CHUNK_SIZE = 256
BOUNDARY_LIMIT = 1e-6
MAX_ABORT_FRACTION = 0.01


class EnsembleAbortError(RuntimeError):
    """More than 1% of trajectories aborted."""

    def __init__(self, message: str, result: "EnsembleResult"):
        super().__init__(message)
        self.result = result


def initial_wavefunction(config: SimConfig) -> WaveFunction:
    ini = config.initial
    if ini.kind == "uniform":
        return uniform_wavefunction(config.grid)
    return build_gaussian_packet(config.grid, ini.mean, ini.width, ini.momentum)


@dataclass
class EnsembleResult:
    config: SimConfig
    records: list[TrajectoryRecord]
    counters: GuidanceCounters = field(default_factory=GuidanceCounters)
    tests: list = field(default_factory=list)

    @property
    def master_seed(self) -> int:
        return self.config.run.master_seed

    @property
    def survivors(self) -> list[TrajectoryRecord]:
        return [r for r in self.records if r.aborted is None]

    @property
    def abort_count(self) -> int:
        return sum(1 for r in self.records if r.aborted is not None)

    @property
    def abort_fraction(self) -> float:
        return self.abort_count / max(1, len(self.records))

    def events(self):
        """(trajectory index, event) pairs over surviving trajectories, index order."""
        for rec in self.survivors:
            for ev in rec.events:
                yield rec.index, ev

    def manifest(self) -> dict[str, Any]:
        c = self.counters
        reasons: dict[str, int] = {}
        for r in self.records:
            if r.aborted is not None:
                reasons[r.aborted] = reasons.get(r.aborted, 0) + 1
        return {
            "version": __version__,
            "master_seed": self.master_seed,
            "config": self.config.to_raw(),
            "trajectories": len(self.records),
            "aborted": self.abort_count,
            "abort_reasons": reasons,
            "events": sum(len(r.events) for r in self.survivors),
            "velocity_evaluations": c.evaluations,
            "velocity_clamps": c.clamps,
            "position_wraps": c.wraps,
            "max_boundary_mass": max((r.diagnostics["max_boundary_mass"] for r in self.records),
                                     default=0.0),
            "max_norm_drift": max((r.diagnostics["max_norm_drift"] for r in self.records),
                                  default=0.0),
            "max_collapse_norm_error": max(
                (r.diagnostics["max_collapse_norm_error"] for r in self.records), default=0.0),
        }


class _Chunk:
    """Mutable per-chunk state; row r of every array is one trajectory."""

    def __init__(self, config: SimConfig, indices: Sequence[int],
                 sampling_psi: Optional[WaveFunction]):
        self.config = config
        grid, run = config.grid, config.run
        self.grid = grid
        self.mode = run.mode
        self.rate = config.collapse_rate
        self.plan = make_plan(config.params, grid, run.dt)
        self.v_max = default_v_max(grid, run.dt)
        self.margin = config.margin_cells()
        self.counters = GuidanceCounters()

        psi0 = initial_wavefunction(config)
        sampler = sampling_psi if sampling_psi is not None else psi0
        cdf0 = np.cumsum(sampler.density().ravel())
        n = len(indices)
        self.indices = list(indices)
        self.seeds = [derive_trajectory_seed(run.master_seed, k) for k in indices]
        streams = [trajectory_streams(s, self.mode) for s in self.seeds]
        self.rng_sched = [s[1] for s in streams]
        self.rng_center = [s[2] for s in streams]
        self.q = np.stack([sample_initial_configuration(sampler, s[0], cdf0).flat
                           for s in streams])
        self.shared = not (self.mode.collapses and self.rate > 0)
        rows = 1 if self.shared else n
        self.psi = np.repeat(psi0.amplitudes[None], rows, axis=0)
        self.t = np.zeros(n)
        self.next_t = np.full(n, np.inf)
        self.next_i = np.zeros(n, dtype=np.int64)
        if not self.shared:
            for r in range(n):
                sched = next_collapse(self.rng_sched[r], grid.particle_count, self.rate, 0.0)
                self.next_t[r], self.next_i[r] = sched
        self.snap_times = np.asarray(run.snapshot_times, float)
        self.snap_ptr = np.zeros(n, dtype=np.int64)
        self.snaps = np.full((n, len(self.snap_times), grid.ndim), np.nan)
        self.snap_pit = np.full((n, len(self.snap_times), grid.ndim), np.nan)
        self.events: list[list[CollapseEvent]] = [[] for _ in range(n)]
        self.max_edge = np.zeros(n)
        self.max_drift = np.zeros(n)
        self.max_collapse_norm_err = np.zeros(n)
        self.abort: list[Optional[str]] = [None] * n
        self.pending = np.full(n, np.nan)
        self.live = np.arange(n)  # chunk row of each array row
        self._take_snapshots(np.arange(n))

    # -- helpers over "array rows" (positions in the compacted arrays) ----

    def _psi_row(self, a: int) -> int:
        return 0 if self.shared else a

    def _take_snapshots(self, arows: np.ndarray) -> None:
        for a in arows:
            r = self.live[a]
            while (self.snap_ptr[r] < len(self.snap_times)
                   and self.snap_times[self.snap_ptr[r]] == self.t[a]):
                s = self.snap_ptr[r]
                self.snaps[r, s] = self.q[a]
                dens = np.abs(self.psi[self._psi_row(a)]) ** 2
                for k in range(self.grid.ndim):
                    self.snap_pit[r, s, k] = marginal_cdf(dens, self.grid, k, self.q[a, k])
                self.snap_ptr[r] += 1

    def _next_snapshot(self) -> np.ndarray:
        ptr = self.snap_ptr[self.live]
        out = np.full(len(ptr), np.inf)
        has = ptr < len(self.snap_times)
        out[has] = self.snap_times[ptr[has]]
        return out

    def _collapse(self, a: int) -> None:
        r = self.live[a]
        grid, params = self.grid, self.config.params
        d = grid.spatial_dim
        i = int(self.next_i[a])
        T = float(self.t[a])
        psi_before = WaveFunction(self.psi[a], grid)
        q = self.q[a]
        if self.mode is Mode.GRWP:
            x, z = choose_center_grwp(q, i, params.sigma, self.rng_center[r], d=d)
        elif self.mode is Mode.GRW:
            x, z = choose_center_grw(psi_before, i, params.sigma, self.rng_center[r])
        else:
            x, z = choose_center_pinned(q, i, d=d)
        rho = collapse_density_rho(psi_before, i, x, params.sigma)
        after, c = apply_collapse(self.psi[a], i, x, params.sigma, grid, check=False)
        if not (c >= MIN_NORM_CONST and math.isfinite(c)):
            self.abort[r] = "void collapse"
            return
        self.psi[a] = after
        dens_after = np.abs(after) ** 2
        norm_err = abs(float(np.sum(dens_after)) * grid.cell_volume - 1.0)
        self.max_collapse_norm_err[r] = max(self.max_collapse_norm_err[r], norm_err)
        axis = i * d
        pit = float(marginal_cdf(dens_after, grid, axis, q[axis]))
        ev = CollapseEvent(k=len(self.events[r]) + 1, t=T, particle=i,
                           center=tuple(float(v) for v in x), offset=tuple(float(v) for v in z),
                           norm_const=float(c), mode=self.mode,
                           position=tuple(float(v) for v in q), pit=pit, rho=rho)
        self.events[r].append(ev)
        sched = next_collapse(self.rng_sched[r], grid.particle_count, self.rate, T)
        # a zero waiting time would stall the step loop
        self.next_t[a] = max(sched.time, np.nextafter(T, np.inf))
        self.next_i[a] = sched.particle

    def _compact(self, keep: np.ndarray) -> None:
        self.live = self.live[keep]
        self.q = self.q[keep]
        self.t = self.t[keep]
        self.next_t = self.next_t[keep]
        self.next_i = self.next_i[keep]
        if not self.shared:
            self.psi = self.psi[keep]

    def run(self) -> list[TrajectoryRecord]:
        run, grid = self.config.run, self.grid
        t_final, dt = run.t_final, run.dt
        while len(self.live):
            stop = np.minimum(np.minimum(self.next_t, self._next_snapshot()), t_final)
            rem = stop - self.t
            reach = rem <= dt * (1 + STEP_SLACK)
            h = np.where(reach, rem, dt)
            if self.shared:
                h_step = None if h[0] == dt else float(h[0])
            else:
                h_step = None if not reach.any() else h
            prod = step_with_midpoint(self.psi, self.plan, h_step)
            h_q = dt if h_step is None else h
            self.q = advance_trajectory(self.q, self.psi, prod.mid, h_q, self.config.params,
                                        grid, self.v_max, self.counters)
            self.psi = prod.end
            self.t = np.where(reach, stop, self.t + h)

            dens = np.abs(self.psi) ** 2
            total = np.sum(dens, axis=tuple(range(1, dens.ndim))) * grid.cell_volume
            edge = np.atleast_1d(edge_mass(dens, grid, self.margin))
            drift = np.abs(np.sqrt(total) - 1.0)
            if self.shared:
                edge = np.broadcast_to(edge, self.t.shape)
                drift = np.broadcast_to(drift, self.t.shape)
            rows = self.live
            self.max_edge[rows] = np.maximum(self.max_edge[rows], edge)
            self.max_drift[rows] = np.maximum(self.max_drift[rows], drift)
            for a in np.flatnonzero(edge > BOUNDARY_LIMIT):
                self.abort[rows[a]] = "boundary mass"

            arrived = np.flatnonzero(reach)
            self._take_snapshots(arrived)
            for a in arrived:
                if self.t[a] == self.next_t[a] and self.next_t[a] <= t_final \
                        and self.abort[rows[a]] is None:
                    self._collapse(a)
            done = np.array([self.abort[r] is not None for r in rows]) | (self.t >= t_final)
            if done.any():
                for a in np.flatnonzero(done):
                    if self.abort[rows[a]] is None and np.isfinite(self.next_t[a]):
                        self.pending[rows[a]] = self.next_t[a]
                self._compact(np.flatnonzero(~done))

        out = []
        for r, idx in enumerate(self.indices):
            pending = None if np.isnan(self.pending[r]) else float(self.pending[r])
            out.append(TrajectoryRecord(
                index=idx, seed=self.seeds[r], events=tuple(self.events[r]),
                snapshot_times=tuple(self.snap_times.tolist()), snapshots=self.snaps[r],
                diagnostics={"max_boundary_mass": float(self.max_edge[r]),
                             "max_norm_drift": float(self.max_drift[r]),
                             "max_collapse_norm_error": float(self.max_collapse_norm_err[r]),
                             "abort": self.abort[r], "snapshot_pit": self.snap_pit[r]},
                pending_collapse=pending))
        return out


def simulate_chunk(config: SimConfig, indices: Sequence[int],
                   sampling_psi: Optional[WaveFunction] = None):
    """Simulate trajectories ``indices`` together; returns (records, counters)."""
    chunk = _Chunk(config, indices, sampling_psi)
    records = chunk.run()
    return records, chunk.counters


def _chunk_job(args):
    return simulate_chunk(*args)


def run_trajectory(config: SimConfig, index: int = 0,
                   sampling_psi: Optional[WaveFunction] = None) -> TrajectoryRecord:
    """Simulate trajectory ``index`` alone.

    Its seed is ``derive_trajectory_seed(master_seed, index)``; guidance
    counters are attached to the record's diagnostics.
    """
    records, counters = simulate_chunk(config, [index], sampling_psi)
    rec = records[0]
    diag = dict(rec.diagnostics)
    diag.update(velocity_evaluations=counters.evaluations, velocity_clamps=counters.clamps,
                position_wraps=counters.wraps)
    return TrajectoryRecord(rec.index, rec.seed, rec.events, rec.snapshot_times, rec.snapshots,
                            diag, rec.pending_collapse)


def chunk_ranges(n: int, chunk_size: int = CHUNK_SIZE, start: int = 0) -> list[range]:
    stop = start + n
    return [range(s, min(s + chunk_size, stop)) for s in range(start, stop, chunk_size)]


def run_ensemble(config: SimConfig, workers: int = 1,
                 sampling_psi: Optional[WaveFunction] = None,
                 check_aborts: bool = True, first_index: int = 0) -> EnsembleResult:
    """Run ``config.run.ensemble_n`` trajectories, indices first_index..first_index+n-1.

    Trajectory seeds depend only on the index, so a run starting at
    ``first_index = n`` extends an earlier run of size ``n`` exactly.

    ``sampling_psi`` replaces |psi0|^2 as the law of the initial
    configuration (used for deliberately mis-seeded control runs).  Raises
    EnsembleAbortError when more than 1% of trajectories abort.
    """
    if first_index < 0:
        raise ValueError("first_index must be >= 0")
    chunks = chunk_ranges(config.run.ensemble_n, start=first_index)
    jobs = [(config, list(c), sampling_psi) for c in chunks]
    workers = max(1, min(int(workers), len(jobs)))
    if workers == 1:
        parts = [_chunk_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    records: list[TrajectoryRecord] = []
    counters = GuidanceCounters()
    for recs, cnt in parts:
        records.extend(recs)
        counters.merge(cnt)
    records.sort(key=lambda r: r.index)
    result = EnsembleResult(config, records, counters)
    log.info("ensemble mode=%s n=%d events=%d aborted=%d", config.mode.value, len(records),
             sum(len(r.events) for r in records), result.abort_count)
    if check_aborts and result.abort_fraction > MAX_ABORT_FRACTION:
        raise EnsembleAbortError(
            f"{result.abort_count} of {len(records)} trajectories aborted", result)
    return result


def default_workers() -> int:
    """``GRWP_WORKERS`` if set, else the CPU count."""
    env = os.environ.get("GRWP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
