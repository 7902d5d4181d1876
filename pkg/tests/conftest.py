import copy

import pytest

from grwp.config import validate_config
from grwp.core import GridSpec, PhysicalParams, PotentialSpec

SMALL = {
    "particles": {"N": 1, "d": 1},
    "physics": {"hbar": 1.0, "masses": [1.0], "lambda": 1.0, "sigma": 0.5},
    "potential": {"kind": "zero"},
    "grid": {"domain": [[-20.0, 20.0]], "points": [256]},
    "initial": {"kind": "gaussian", "mean": [0.0], "width": [1.0], "momentum": [0.0]},
    "run": {"mode": "grwp", "t_final": 1.0, "dt": 0.01, "ensemble_n": 200,
            "master_seed": 11, "snapshot_times": [0.5, 1.0]},
}


def small_raw(**run):
    raw = copy.deepcopy(SMALL)
    raw["run"].update(run)
    return raw


def small_config(**run):
    return validate_config(small_raw(**run))


def grid_1d(a=-20.0, b=20.0, m=512):
    return GridSpec(1, 1, (a,), (b,), (m,))


def free_params(masses=(1.0,), lam=1.0, sigma=0.5, hbar=1.0):
    return PhysicalParams(hbar, tuple(masses), lam, sigma, PotentialSpec())


@pytest.fixture
def canon_grid():
    return grid_1d()


@pytest.fixture
def free():
    return free_params()


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
