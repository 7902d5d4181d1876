"""Simulation config: JSON schema, defaults and validation.

Canonical layout (JSON)::

    {
      "particles": {"N": 1, "d": 1},
      "physics":   {"hbar": 1.0, "masses": [1.0], "lambda": 1.0, "sigma": 0.5},
      "potential": {"kind": "zero"},              # or harmonic / tabulated
      "grid":      {"domain": [[-20, 20]], "points": [512]},
      "initial":   {"kind": "gaussian", "mean": [0], "width": [1], "momentum": [0]},
      "run": {"mode": "grwp", "t_final": 2.0, "dt": 0.005, "ensemble_n": 10000,
              "master_seed": 0, "snapshot_times": [1.0], "boundary_margin": 16}
    }

``grid.domain`` may be a single ``[a, b]`` pair (applied to every axis) or one
pair per configuration axis; ``grid.points`` likewise an int or a list.
Harmonic potentials take ``omega`` (scalar or one value per spatial
dimension).  Tabulated potentials take ``file``: a ``.npy`` array with the
grid shape or a text file readable by ``numpy.loadtxt``, resolved relative
to the config file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .core import (MAX_CONFIG_AXES, MIN_POINTS_PER_AXIS, GridSpec, Mode, PhysicalParams,
                   PotentialSpec, is_sequence)

DEFAULT_HBAR = 1.0
DEFAULT_MASS = 1.0
DEFAULT_LAMBDA = 1.0
DEFAULT_SIGMA = 0.5


class ConfigError(ValueError):
    """Raised with every violation found, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class InitialState:
    kind: str = "gaussian"  # or "uniform"
    mean: tuple[float, ...] = ()
    width: tuple[float, ...] = ()
    momentum: tuple[float, ...] = ()


@dataclass(frozen=True)
class RunControls:
    mode: Mode = Mode.GRWP
    t_final: float = 2.0
    dt: float = 0.005
    ensemble_n: int = 1
    master_seed: int = 0
    snapshot_times: tuple[float, ...] = ()
    boundary_margin: int = 0  # cells; 0 means max(2, M // 32)


@dataclass(frozen=True)
class SimConfig:
    params: PhysicalParams
    grid: GridSpec
    initial: InitialState
    run: RunControls
    source_dir: Optional[str] = field(default=None, compare=False)

    @property
    def mode(self) -> Mode:
        return self.run.mode

    @property
    def collapse_rate(self) -> float:
        """Per-particle rate actually used; bohm_only forces zero."""
        return 0.0 if self.mode is Mode.BOHM_ONLY else self.params.lam

    def margin_cells(self) -> int:
        if self.run.boundary_margin > 0:
            return self.run.boundary_margin
        return max(2, min(self.grid.points) // 32)

    def replace(self, **run_changes) -> "SimConfig":
        """Copy with run controls replaced (``mode`` accepts strings)."""
        raw = self.to_raw()
        for key, value in run_changes.items():
            if key not in raw["run"]:
                raise KeyError(key)
            raw["run"][key] = value.value if isinstance(value, Mode) else value
        return validate_config(raw, base_dir=self.source_dir)

    def to_raw(self) -> dict:
        p, g, ini, run = self.params, self.grid, self.initial, self.run
        pot: dict[str, Any] = {"kind": p.potential.kind}
        if p.potential.kind == "harmonic":
            pot["omega"] = list(p.potential.omega)
        elif p.potential.kind == "tabulated":
            if p.potential.file is not None:
                pot["file"] = p.potential.file
            else:
                pot["values"] = list(p.potential.values)
        initial: dict[str, Any] = {"kind": ini.kind}
        if ini.kind == "gaussian":
            initial.update(mean=list(ini.mean), width=list(ini.width),
                           momentum=list(ini.momentum))
        return {
            "particles": {"N": g.particle_count, "d": g.spatial_dim},
            "physics": {"hbar": p.hbar, "masses": list(p.masses), "lambda": p.lam,
                        "sigma": p.sigma},
            "potential": pot,
            "grid": {"domain": [[lo, hi] for lo, hi in zip(g.lower, g.upper)],
                     "points": list(g.points)},
            "initial": initial,
            "run": {"mode": run.mode.value, "t_final": run.t_final, "dt": run.dt,
                    "ensemble_n": run.ensemble_n, "master_seed": run.master_seed,
                    "snapshot_times": list(run.snapshot_times),
                    "boundary_margin": run.boundary_margin},
        }


def _per_axis(value, n: int, name: str, errors: list) -> Optional[list]:
    if value is None:
        return None
    if not is_sequence(value):
        return [value] * n
    value = list(value)
    if len(value) == 1 and n > 1:
        return value * n
    if len(value) != n:
        errors.append(f"{name} needs {n} entries, got {len(value)}")
        return None
    return value


def _domain_pairs(domain, n: int, errors: list) -> Optional[list]:
    if not is_sequence(domain) or len(domain) == 0:
        errors.append("grid.domain must be [a, b] or a list of [a, b] pairs")
        return None
    if not is_sequence(domain[0]):
        domain = [domain]
    return _per_axis(domain, n, "grid.domain", errors)


def _load_table(ref: str, base_dir: Optional[str]) -> np.ndarray:
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path)


def validate_config(raw: Any, base_dir: Optional[str] = None) -> SimConfig:
    """Apply defaults and check every invariant; raise ConfigError listing all violations.

    Accepts a parsed mapping or an already validated SimConfig (returned
    as an equal config).
    """
    if isinstance(raw, SimConfig):
        return validate_config(raw.to_raw(), base_dir=base_dir or raw.source_dir)
    if not isinstance(raw, Mapping):
        raise ConfigError(["config must be a mapping"])
    errors: list[str] = []

    def section(name):
        value = raw.get(name, {})
        if not isinstance(value, Mapping):
            errors.append(f"{name} must be a mapping")
            return {}
        return value

    particles, physics, potential = section("particles"), section("physics"), section("potential")
    grid_raw, initial_raw, run_raw = section("grid"), section("initial"), section("run")

    for sect, key, label in ((particles, "N", "particles.N"), (particles, "d", "particles.d"),
                             (grid_raw, "domain", "grid.domain"),
                             (grid_raw, "points", "grid.points"),
                             (run_raw, "t_final", "run.t_final"), (run_raw, "dt", "run.dt")):
        if key not in sect:
            errors.append(f"missing required key {label}")
    if errors:
        raise ConfigError(errors)

    n_part, d = int(particles["N"]), int(particles["d"])
    if n_part < 1:
        errors.append("particles.N must be >= 1")
    if d not in (1, 2, 3):
        errors.append("particles.d must be 1, 2 or 3")
    n_axes = n_part * d
    if n_axes > MAX_CONFIG_AXES:
        errors.append(f"D={n_axes} exceeds desk-scale cap of {MAX_CONFIG_AXES} configuration axes")
        raise ConfigError(errors)
    if errors:
        raise ConfigError(errors)

    hbar = float(physics.get("hbar", DEFAULT_HBAR))
    masses = physics.get("masses", [DEFAULT_MASS] * n_part)
    masses = [float(m) for m in (masses if is_sequence(masses) else [masses] * n_part)]
    lam = float(physics.get("lambda", DEFAULT_LAMBDA))
    sigma = float(physics.get("sigma", DEFAULT_SIGMA))
    if not hbar > 0:
        errors.append("hbar must be positive")
    if len(masses) != n_part:
        errors.append(f"physics.masses has {len(masses)} entries for N={n_part}")
    if any(not m > 0 for m in masses):
        errors.append("every mass must be positive")
    if not lam >= 0:
        errors.append("lambda must be nonnegative")
    if not sigma > 0:
        errors.append("sigma must be positive")

    pairs = _domain_pairs(grid_raw["domain"], n_axes, errors)
    points = _per_axis(grid_raw["points"], n_axes, "grid.points", errors)
    lower = upper = None
    if pairs is not None:
        lower = tuple(float(p[0]) for p in pairs)
        upper = tuple(float(p[1]) for p in pairs)
        if any(not hi > lo for lo, hi in zip(lower, upper)):
            errors.append("domain widths must be positive")
    if points is not None:
        points = tuple(int(m) for m in points)
        if any(m < MIN_POINTS_PER_AXIS for m in points):
            errors.append(f"every axis needs at least {MIN_POINTS_PER_AXIS} points")
    grid = None
    if lower is not None and points is not None and not errors:
        grid = GridSpec(n_part, d, lower, upper, points)

    kind = potential.get("kind", "zero")
    pot = PotentialSpec()
    if kind == "zero":
        pass
    elif kind == "harmonic":
        omega = _per_axis(potential.get("omega", 1.0), d, "potential.omega", errors)
        if omega is not None:
            omega = tuple(float(w) for w in omega)
            if any(w < 0 for w in omega):
                errors.append("harmonic omega must be nonnegative")
            pot = PotentialSpec("harmonic", omega=omega)
    elif kind == "tabulated":
        ref = potential.get("file")
        try:
            if ref is not None:
                table = np.asarray(_load_table(ref, base_dir), float)
            else:
                table = np.asarray(potential["values"], float)
        except (OSError, KeyError, ValueError) as exc:
            errors.append(f"cannot read tabulated potential: {exc}")
            table = None
        if table is not None and grid is not None:
            if table.size != int(np.prod(grid.shape)):
                errors.append(f"tabulated potential has {table.size} values, grid has "
                              f"{int(np.prod(grid.shape))} nodes")
            elif not np.all(np.isfinite(table)):
                errors.append("tabulated potential must be finite")
            else:
                pot = PotentialSpec("tabulated", values=tuple(table.ravel().tolist()),
                                    file=ref)
    else:
        errors.append(f"unknown potential kind {kind!r}")

    ini_kind = initial_raw.get("kind", "gaussian")
    initial = InitialState(kind=ini_kind)
    if ini_kind == "gaussian" and grid is not None:
        centre = [(lo + hi) / 2 for lo, hi in zip(grid.lower, grid.upper)]
        mean = _per_axis(initial_raw.get("mean", centre), n_axes, "initial.mean", errors)
        width = _per_axis(initial_raw.get("width", 1.0), n_axes, "initial.width", errors)
        mom = _per_axis(initial_raw.get("momentum", 0.0), n_axes, "initial.momentum", errors)
        if mean is not None and width is not None and mom is not None:
            initial = InitialState("gaussian", tuple(map(float, mean)), tuple(map(float, width)),
                                   tuple(map(float, mom)))
            if any(not w > 0 for w in initial.width):
                errors.append("initial.width must be positive")
            if not grid.contains(initial.mean):
                errors.append("initial.mean must lie inside the domain")
    elif ini_kind not in ("gaussian", "uniform"):
        errors.append(f"unknown initial kind {ini_kind!r}")

    try:
        mode = Mode(run_raw.get("mode", Mode.GRWP.value))
    except ValueError:
        errors.append(f"unknown mode {run_raw.get('mode')!r}")
        mode = Mode.GRWP
    t_final, dt = float(run_raw["t_final"]), float(run_raw["dt"])
    if not t_final > 0:
        errors.append("t_final must be positive")
    if not dt > 0:
        errors.append("dt must be positive")
    ensemble_n = int(run_raw.get("ensemble_n", 1))
    if ensemble_n < 1:
        errors.append("ensemble_n must be >= 1")
    seed = int(run_raw.get("master_seed", 0))
    if not 0 <= seed < 2 ** 64:
        errors.append("master_seed must be an unsigned 64-bit integer")
    snaps = tuple(float(s) for s in run_raw.get("snapshot_times", ()))
    if any(b <= a for a, b in zip(snaps, snaps[1:])):
        errors.append("snapshot_times must be strictly increasing")
    if any(s < 0 or s > t_final for s in snaps):
        errors.append("snapshot_times must lie in [0, t_final]")
    margin = int(run_raw.get("boundary_margin", 0))
    if margin < 0:
        errors.append("boundary_margin must be nonnegative")

    if errors:
        raise ConfigError(errors)
    params = PhysicalParams(hbar, tuple(masses), lam, sigma, pot)
    run = RunControls(mode, t_final, dt, ensemble_n, seed, snaps, margin)
    return SimConfig(params, grid, initial, run, source_dir=base_dir)


def load_config(path) -> SimConfig:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    return validate_config(raw, base_dir=str(path.parent))
