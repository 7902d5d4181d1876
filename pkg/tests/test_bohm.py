import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grwp.bohm import (GuidanceCounters, advance_trajectory, default_v_max, velocity_at,
                       velocity_field)
from grwp.core import Configuration, GridSpec, WaveFunction
from grwp.schrodinger import (analytic_free_gaussian, build_gaussian_packet, free_gaussian_width,
                              make_plan, step_with_midpoint)

from conftest import free_params, grid_1d

NO_CLAMP = np.array([1e9])


def plane_wave(grid, k):
    x = grid.axis_nodes(0)
    return WaveFunction(np.exp(1j * k * x) / math.sqrt(grid.widths[0]), grid)


def commensurate_k(grid, n=5):
    return 2 * math.pi * n / grid.widths[0]


def test_plane_wave_velocity(canon_grid):
    k = commensurate_k(canon_grid)
    for m in (1.0, 2.5):
        v = velocity_field(plane_wave(canon_grid, k), free_params(masses=(m,))).values
        assert np.max(np.abs(v - k / m)) < 1e-10


def test_real_wavefunction_has_zero_velocity(canon_grid):
    v = velocity_field(build_gaussian_packet(canon_grid, 0.3, 1.0, 0.0), free_params()).values
    assert np.max(np.abs(v)) < 1e-10


@pytest.mark.parametrize("k", [0.0, 1.0])
def test_spreading_gaussian_velocity_oracle(canon_grid, k):
    t, s0 = 1.0, 1.0
    psi = analytic_free_gaussian(t, s0, k, 1.0, 1.0, canon_grid)
    v = velocity_field(psi, free_params()).values[:, 0]
    tau_dot = 1.0 / (2 * s0 ** 2)
    tau = tau_dot * t
    centre = k * t
    x = canon_grid.axis_nodes(0)
    exact = k + (x - centre) * tau * tau_dot / (1 + tau ** 2)
    core = np.abs(x - centre) <= 3 * free_gaussian_width(t, s0)
    assert np.max(np.abs(v[core] - exact[core])) < 1e-6


def test_regularization_keeps_nodes_finite(canon_grid):
    x = canon_grid.axis_nodes(0)
    psi = x * np.exp(-x ** 2 / 4) * np.exp(0.7j * x)  # exact zero at x = 0
    f = velocity_field(psi, free_params(), canon_grid)
    assert np.all(np.isfinite(f.values))
    assert f.eps == pytest.approx(1e-12 * np.max(np.abs(psi) ** 2))


def test_velocity_at_node_is_node_value(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.8).amplitudes * np.exp(
        0.1j * canon_grid.axis_nodes(0) ** 2)
    f = velocity_field(psi, free_params(), canon_grid)
    for j in (200, 256, 300):
        q = canon_grid.axis_nodes(0)[j]
        assert velocity_at(f, [q])[0] == f.values[j, 0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-20.0, 19.999))
def test_plane_wave_velocity_anywhere(q):
    grid = grid_1d()
    k = commensurate_k(grid, 3)
    f = velocity_field(plane_wave(grid, k), free_params())
    assert abs(velocity_at(f, [q])[0] - k) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-7.9, 7.9), st.floats(-7.9, 7.9))
def test_interpolation_between_corner_values_2d(q1, q2):
    grid = GridSpec(1, 2, (-8.0, -8.0), (8.0, 8.0), (32, 24))
    psi = build_gaussian_packet(grid, [0.0, 0.0], [1.0, 1.0], [0.5, -1.0]).amplitudes
    psi = psi * np.exp(0.2j * grid.mesh()[0] * grid.mesh()[1])
    f = velocity_field(psi, free_params(), grid)
    v = velocity_at(f, [q1, q2])
    vals = f.values.reshape(-1, 2)
    assert np.all(v >= vals.min(axis=0) - 1e-12) and np.all(v <= vals.max(axis=0) + 1e-12)


def test_shared_field_broadcasts_to_batch(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 1.0).amplitudes * np.exp(
        0.05j * canon_grid.axis_nodes(0) ** 2)
    f = velocity_field(psi, free_params(), canon_grid)
    qs = np.array([[-1.3], [0.2], [2.7]])
    batch = velocity_at(f, qs)
    for q, v in zip(qs, batch):
        assert np.array_equal(velocity_at(f, q), v)


def test_clamp_counted(canon_grid):
    k = commensurate_k(canon_grid, 40)
    f = velocity_field(plane_wave(canon_grid, k), free_params())
    counters = GuidanceCounters()
    v = velocity_at(f, [0.0], v_max=np.array([1.0]), counters=counters)
    assert v[0] == 1.0
    assert counters.clamps == 1 and counters.evaluations == 1
    assert default_v_max(canon_grid, 0.005)[0] == pytest.approx(0.25 * 40 / 512 / 0.005)


def test_advance_plane_wave(canon_grid):
    k = commensurate_k(canon_grid, 2)
    grid = canon_grid
    # choose mass so that hbar k / m = 2
    params = free_params(masses=(k / 2,))
    psi = plane_wave(grid, k)
    q = advance_trajectory(Configuration(np.zeros((1, 1))), psi, psi, 0.1, params,
                           v_max=NO_CLAMP)
    assert abs(q.positions[0, 0] - 0.2) < 1e-12
    assert q.t == pytest.approx(0.1)


def test_advance_real_stationary(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    q0 = Configuration(np.array([[0.7]]))
    q1 = advance_trajectory(q0, psi, psi, 0.01, free_params())
    assert abs(q1.positions[0, 0] - 0.7) < 1e-10


def test_wrap_counted(canon_grid):
    k = commensurate_k(canon_grid, 2)
    params = free_params(masses=(k / 2,))
    psi = plane_wave(canon_grid, k)
    counters = GuidanceCounters()
    q = advance_trajectory(np.array([[19.95]]), psi, psi, np.array([0.1]), params, canon_grid,
                           v_max=NO_CLAMP, counters=counters)
    assert counters.wraps == 1
    assert q[0, 0] == pytest.approx(-19.85)


def _path(psi0, grid, dt, t_end, q0):
    params = free_params()
    plan = make_plan(params, grid, dt)
    psi, q = psi0, np.array([[q0]])
    for _ in range(int(round(t_end / dt))):
        st_ = step_with_midpoint(psi, plan)
        q = advance_trajectory(q, psi, st_.mid, np.array([dt]), params, grid, v_max=NO_CLAMP)
        psi = st_.end
    return q[0, 0]


def test_free_gaussian_bohm_path(canon_grid):
    psi0 = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0).amplitudes
    q = _path(psi0, canon_grid, 0.005, 2.0, 1.0)
    assert abs(q - math.sqrt(2)) < 5e-4


def test_midpoint_second_order(canon_grid):
    a = build_gaussian_packet(canon_grid, -1.5, 1.0, 1.0).amplitudes
    b = build_gaussian_packet(canon_grid, 1.5, 0.7, -0.5).amplitudes
    psi0 = a + 0.8 * b
    psi0 /= math.sqrt(np.sum(np.abs(psi0) ** 2) * canon_grid.cell_volume)
    ref = _path(psi0, canon_grid, 0.02 / 16, 1.0, 0.3)
    errs = [abs(_path(psi0, canon_grid, h, 1.0, 0.3) - ref) for h in (0.04, 0.02, 0.01)]
    for e1, e2 in zip(errs, errs[1:]):
        assert 3.5 <= e1 / e2 <= 4.5


def test_nonpositive_dt_rejected(canon_grid):
    psi = build_gaussian_packet(canon_grid, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        advance_trajectory(np.array([[0.0]]), psi, psi, np.array([0.0]), free_params(),
                           canon_grid)
