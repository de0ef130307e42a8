import math

import numpy as np
import pytest

from wavestab.fields import (
    ScalarField,
    build_grid,
    gradient,
    integrate,
    laplacian,
    load_csv,
    load_raw,
    save_csv,
    save_raw,
    second_derivatives,
)

UNIT = ((0.0, 1.0), (0.0, 1.0))
KBOX = ((0.3, 0.7), (0.3, 0.7))


def unit_grid(n=101, gamma0=None):
    return build_grid(UNIT, n, KBOX, gamma0)


def test_unit_square_spacing():
    g = unit_grid(101)
    assert g.nx == g.ny == 101
    assert g.h == pytest.approx(0.01, abs=1e-15)


def test_gamma_partition_full_observation():
    g = unit_grid(51)
    assert not g.gamma0.any()
    assert np.array_equal(g.gamma1, g.boundary_mask)


def test_gamma_partition_with_edges():
    g = unit_grid(51, gamma0=("left", "bottom"))
    assert np.array_equal(g.gamma0 | g.gamma1, g.boundary_mask)
    assert not (g.gamma0 & g.gamma1).any()
    # corner (0,0) joins gamma0 through either touching edge
    assert g.gamma0[0, 0]
    assert g.gamma1[-1, -1]


def test_k_mask_margin_scan():
    g = unit_grid(101)
    X, Y = g.meshes()
    dist = np.minimum.reduce([X, 1.0 - X, Y, 1.0 - Y])
    assert dist[g.k_mask].min() >= 2 * g.h - 1e-12


def test_k_box_touching_margin_rejected():
    with pytest.raises(ValueError):
        build_grid(UNIT, 101, ((0.01, 0.7), (0.3, 0.7)))


def test_duplicate_gamma0_edges_rejected():
    with pytest.raises(ValueError):
        build_grid(UNIT, 51, KBOX, ("left", "left"))


def test_rectangular_extents_commensurate():
    g = build_grid(((0.0, 1.0), (0.0, 0.5)), 101, ((0.3, 0.7), (0.1, 0.4)))
    assert g.ny == 51
    assert g.h == pytest.approx(0.01)


def test_gradient_constant_and_linear():
    g = unit_grid(51)
    const = ScalarField.constant(g, 3.7)
    gx, gy = gradient(const)
    assert np.abs(gx.values).max() == 0.0
    assert np.abs(gy.values).max() == 0.0
    lin = ScalarField.from_function(g, lambda x, y: x)
    gx, gy = gradient(lin)
    assert np.abs(gx.values - 1.0).max() < 1e-12
    assert np.abs(gy.values).max() < 1e-12


def test_gradient_second_order_convergence():
    errs = []
    for n in (51, 101, 201):
        g = unit_grid(n)
        f = ScalarField.from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        gx, _ = gradient(f)
        X, Y = g.meshes()
        exact = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        errs.append(np.abs((gx.values - exact)[1:-1, 1:-1]).max())
    order = math.log2(errs[0] / errs[1])
    assert 1.7 < order < 2.3
    order = math.log2(errs[1] / errs[2])
    assert 1.7 < order < 2.3


def test_laplacian_quadratic_exact():
    g = unit_grid(51)
    f = ScalarField.from_function(g, lambda x, y: x * x + y * y)
    lap = laplacian(f)
    assert np.abs(lap.values - 4.0).max() < 1e-9
    zero = laplacian(ScalarField.constant(g, 1.0))
    assert np.abs(zero.values).max() == 0.0


def test_laplacian_second_order_convergence():
    errs = []
    for n in (51, 101, 201):
        g = unit_grid(n)
        f = ScalarField.from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        lap = laplacian(f)
        exact = -2.0 * np.pi**2 * f.values
        errs.append(np.abs((lap.values - exact)[1:-1, 1:-1]).max())
    assert 1.7 < math.log2(errs[1] / errs[2]) < 2.3


def test_operator_linearity():
    g = unit_grid(41)
    rng = np.random.default_rng(7)
    a, b = 1.37, -0.61
    f1 = ScalarField(g, rng.standard_normal((g.nx, g.ny)))
    f2 = ScalarField(g, rng.standard_normal((g.nx, g.ny)))
    combo = ScalarField(g, a * f1.values + b * f2.values)
    for op in (laplacian, lambda f: gradient(f)[0], lambda f: gradient(f)[1]):
        lhs = op(combo).values
        rhs = a * op(f1).values + b * op(f2).values
        assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(lhs).max())


def test_laplacian_consistent_with_gradient_divergence():
    # div(grad f) and the 5-point Laplacian agree up to an O(h^2) gap
    gaps = []
    for n in (51, 101):
        g = unit_grid(n)
        f = ScalarField.from_function(
            g, lambda x, y: np.sin(np.pi * x) * np.cos(2 * np.pi * y)
        )
        gx, gy = gradient(f)
        div = gradient(gx)[0].values + gradient(gy)[1].values
        lap = laplacian(f).values
        inner = (slice(2, -2), slice(2, -2))
        gaps.append(np.abs(div[inner] - lap[inner]).max())
    assert gaps[0] < 1.0
    assert 3.0 < gaps[0] / gaps[1] < 5.5  # second-order decay


def test_integrate_constants():
    g = unit_grid(101)
    assert integrate(ScalarField.constant(g, 1.0)) == pytest.approx(1.0, abs=1e-12)
    assert integrate(ScalarField.zeros(g)) == 0.0


def test_integrate_sin_squared():
    g = unit_grid(201)
    f = ScalarField.from_function(
        g, lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2
    )
    assert integrate(f) == pytest.approx(0.25, abs=1e-4)


def test_integrate_empty_region_and_monotone():
    g = unit_grid(41)
    empty = np.zeros((g.nx, g.ny), dtype=bool)
    f = ScalarField.constant(g, 5.0)
    assert integrate(f, empty) == 0.0
    rng = np.random.default_rng(3)
    lo = ScalarField(g, rng.uniform(0.0, 1.0, (g.nx, g.ny)))
    hi = ScalarField(g, lo.values + rng.uniform(0.0, 1.0, (g.nx, g.ny)))
    assert integrate(lo) <= integrate(hi)
    assert integrate(lo, g.k_mask) <= integrate(hi, g.k_mask)


def test_field_validation():
    g = unit_grid(11)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((3, 3)))
    bad = np.zeros((g.nx, g.ny))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, bad)


def test_csv_roundtrip(tmp_path):
    g = unit_grid(21)
    f = ScalarField.from_function(g, lambda x, y: np.cos(x + 2 * y))
    p = tmp_path / "field.csv"
    save_csv(f, p)
    back = load_csv(g, p)
    assert np.array_equal(back.values, f.values)


def test_raw_roundtrip(tmp_path):
    g = unit_grid(21)
    f = ScalarField.from_function(g, lambda x, y: np.cos(3 * x) * y)
    p = tmp_path / "field.bin"
    save_raw(f, p)
    nx, ny, h, vals = load_raw(p)
    assert (nx, ny) == (g.nx, g.ny)
    assert h == pytest.approx(g.h)
    assert np.array_equal(vals, f.values)
    back = load_raw(p, grid=g)
    assert np.array_equal(back.values, f.values)
