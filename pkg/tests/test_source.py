import math

import numpy as np
import pytest

from wavestab.fields import ScalarField, build_grid, gradient, laplacian
from wavestab.source import (
    SourceDecomposition,
    build_source,
    check_wtt0,
    even_extension_view,
    solve_pair,
    solve_w,
    solve_w_coupled,
)
from wavestab.wave import SolverConfig, solve_interior

UNIT = ((0.0, 1.0), (0.0, 1.0))
KBOX = ((0.3, 0.7), (0.3, 0.7))


def unit_grid(n=61):
    return build_grid(UNIT, n, KBOX)


def k_bump(grid, amplitude=0.1, center=(0.5, 0.5), rho=0.15):
    X, Y = grid.meshes()
    s = np.minimum(((X - center[0]) ** 2 + (Y - center[1]) ** 2) / rho**2, 1.0)
    vals = amplitude * (1.0 - s) ** 3
    vals[~grid.k_mask] = 0.0
    return ScalarField(grid, vals)


def sinsin(grid):
    return ScalarField.from_function(
        grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    )


def test_build_source_zero_and_constant():
    g = unit_grid(41)
    f = sinsin(g)
    D = ScalarField.constant(g, 1.0)
    R = solve_interior(D, f, None, None, None, SolverConfig(horizon=0.2))
    S0 = build_source(ScalarField.zeros(g), R)
    assert np.abs(S0.snapshots).max() == 0.0
    # constant F (support constraint lifted): S = eps * lap(R)
    eps = 0.25
    S = build_source(ScalarField.constant(g, eps), R, enforce_support=False)
    for k in (0, R.nt // 2, R.nt):
        lap_r = laplacian(ScalarField(g, R.snapshots[k])).values
        assert np.abs(S.snapshots[k] - eps * lap_r).max() < 1e-14


def test_build_source_matches_term_recomputation():
    g = unit_grid(41)
    F = k_bump(g)
    D = ScalarField.constant(g, 1.0)
    R = solve_interior(D, sinsin(g), None, None, None, SolverConfig(horizon=0.2))
    S = build_source(F, R)
    lap_f = laplacian(F).values
    fx, fy = (a.values for a in gradient(F))
    for k in (0, R.nt):
        r = ScalarField(g, R.snapshots[k])
        rx, ry = (a.values for a in gradient(r))
        expect = lap_f * r.values + 2.0 * (fx * rx + fy * ry) + F.values * laplacian(r).values
        assert np.array_equal(S.snapshots[k], expect)


def test_build_source_support_enforced():
    g = unit_grid(41)
    bad = ScalarField.constant(g, 0.1)
    D = ScalarField.constant(g, 1.0)
    R = solve_interior(D, sinsin(g), None, None, None, SolverConfig(horizon=0.1))
    with pytest.raises(ValueError):
        build_source(bad, R)
    with pytest.raises(ValueError):
        SourceDecomposition(F=bad, R=R, S=R)


def test_solve_w_zero_source():
    g = unit_grid(31)
    D = ScalarField.constant(g, 1.0)
    w = solve_w(D, None, SolverConfig(horizon=0.3))
    assert np.abs(w.snapshots).max() == 0.0


def test_solve_w_linear_in_source():
    g = unit_grid(31)
    D = ScalarField.constant(g, 1.0)
    f = sinsin(g)
    cfg = SolverConfig(horizon=0.3)
    R = solve_interior(D, f, None, None, None, cfg)
    F = k_bump(g)
    S = build_source(F, R)
    cfg_dt = SolverConfig(horizon=0.3, dt=R.solver_dt)
    w1 = solve_w(D, S, cfg_dt)
    S2 = build_source(ScalarField(g, 2.0 * F.values), R)
    w2 = solve_w(D, S2, cfg_dt)
    assert np.array_equal(w2.snapshots, 2.0 * w1.snapshots)


def test_coupled_matches_dense_source_path_bitwise():
    g = unit_grid(31)
    D1 = ScalarField.from_function(
        g, lambda x, y: 1.0 + 0.05 * np.sin(np.pi * x) * np.sin(np.pi * y)
    )
    F = k_bump(g)
    f = sinsin(g)
    cfg = SolverConfig(horizon=0.4)
    w_c, R_c, _ = solve_w_coupled(D1, F, D1, f, None, cfg)
    S = build_source(F, R_c)
    w_d = solve_w(D1, S, SolverConfig(horizon=0.4, dt=R_c.solver_dt))
    assert np.array_equal(w_c.snapshots, w_d.snapshots)


def test_reduction_reproduces_pair_difference():
    g = unit_grid(61)
    D1 = ScalarField.constant(g, 1.0)
    F = k_bump(g, amplitude=0.1)
    D2 = ScalarField(g, D1.values - F.values)
    f = sinsin(g)
    cfg = SolverConfig(horizon=1.0)
    u1, u2 = solve_pair(D1, D2, f, None, cfg)
    w, _, _ = solve_w_coupled(D1, F, D2, f, None, SolverConfig(horizon=1.0, dt=u1.solver_dt))
    diff = u1.snapshots - u2.snapshots
    denom = np.abs(diff).max()
    assert denom > 0
    assert np.abs(w.snapshots - diff).max() / denom <= 1e-10


def test_wtt0_zero_perturbation_degenerate():
    g = unit_grid(31)
    D = ScalarField.constant(g, 1.0)
    f = sinsin(g)
    cfg = SolverConfig(horizon=0.1)
    R = solve_interior(D, f, None, None, None, cfg)
    w = solve_w(D, build_source(ScalarField.zeros(g), R),
                SolverConfig(horizon=0.1, dt=R.solver_dt))
    res = check_wtt0(w, ScalarField.zeros(g), R)
    assert res.degenerate
    assert res.value == 0.0


def test_wtt0_constant_reference():
    g = unit_grid(101)
    D1 = ScalarField.constant(g, 1.0)
    F = k_bump(g, amplitude=0.1)
    D2 = ScalarField(g, D1.values - F.values)
    ones = ScalarField.constant(g, 1.0)
    h_one = lambda x, y, t: np.ones_like(x)
    cfg = SolverConfig(horizon=0.05)
    u1, u2 = solve_pair(D1, D2, ones, h_one, cfg)
    w_snaps = u1.snapshots - u2.snapshots
    from wavestab.fields import SpaceTimeField

    w = SpaceTimeField(g, u1.dt, u1.nt, w_snaps, solver_dt=u1.solver_dt)
    res = check_wtt0(w, F, u2)
    assert not res.degenerate
    assert res.value <= 0.05


def test_wtt0_residual_decreases_under_refinement():
    values = {}
    for n in (51, 101):
        g = unit_grid(n)
        D1 = ScalarField.constant(g, 1.0)
        F = k_bump(g, amplitude=0.1, rho=0.18)
        D2 = ScalarField(g, D1.values - F.values)
        f = sinsin(g)
        cfg = SolverConfig(horizon=0.05)
        u1, u2 = solve_pair(D1, D2, f, None, cfg)
        from wavestab.fields import SpaceTimeField

        w = SpaceTimeField(g, u1.dt, u1.nt, u1.snapshots - u2.snapshots,
                           solver_dt=u1.solver_dt)
        values[n] = check_wtt0(w, F, u2).value
    assert values[101] < values[51]
    assert values[101] <= 0.05


def test_even_extension_symmetries():
    g = unit_grid(31)
    D = ScalarField.constant(g, 1.0)
    f = sinsin(g)
    u = solve_interior(D, f, None, None, None, SolverConfig(horizon=0.3))
    ext = even_extension_view(u)
    for k in (1, 3, u.nt):
        assert np.array_equal(ext.value(-k), ext.value(k))
    for k in (1, 2, u.nt - 1):
        assert np.array_equal(ext.time_derivative(-k), -ext.time_derivative(k))
    assert np.abs(ext.time_derivative(0)).max() == 0.0
    # trapezoid of the odd derivative over (-T, T) vanishes identically
    total = np.zeros((g.nx, g.ny))
    for k in range(1, u.nt):
        total += ext.time_derivative(k) + ext.time_derivative(-k)
    edge = 0.5 * (ext.time_derivative(u.nt) + ext.time_derivative(-u.nt))
    total += edge
    assert np.abs(total).max() < 1e-12
    with pytest.raises(IndexError):
        ext.value(u.nt + 1)
