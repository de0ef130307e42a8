import math

import numpy as np
import pytest

from wavestab.fields import ScalarField, build_grid
from wavestab.geometry import (
    build_quadratic_d,
    build_weight,
    compute_T0,
    q_sigma_mask,
    verify_assumptions,
)

UNIT = ((0.0, 1.0), (0.0, 1.0))
KBOX = ((0.3, 0.7), (0.3, 0.7))


@pytest.fixture(scope="module")
def grid():
    return build_grid(UNIT, 101, KBOX)


@pytest.fixture(scope="module")
def d_default(grid):
    return build_quadratic_d(grid, (-0.5, -0.5), 1.2)


def test_quadratic_d_point_values(grid, d_default):
    # d(1,1) = 1.2 * ((1.5)^2 + (1.5)^2) = 5.4
    assert d_default.values[-1, -1] == pytest.approx(5.4, abs=1e-12)
    # minimum at the corner nearest x0
    assert d_default.values.min() == pytest.approx(0.6, abs=1e-12)
    assert d_default.values.argmin() == 0


def test_quadratic_d_scales_linearly(grid):
    d1 = build_quadratic_d(grid, (-0.5, -0.5), 1.1)
    d2 = build_quadratic_d(grid, (-0.5, -0.5), 2.2)
    assert np.allclose(d2.values, 2.0 * d1.values, rtol=1e-14)


def test_quadratic_d_rejects_interior_point(grid):
    with pytest.raises(ValueError):
        build_quadratic_d(grid, (0.5, 0.5), 1.2)
    with pytest.raises(ValueError):
        build_quadratic_d(grid, (0.0, 0.5), 1.2)  # on the closure
    with pytest.raises(ValueError):
        build_quadratic_d(grid, (-0.5, -0.5), 1.0)  # k must exceed 1


def test_assumptions_unit_coefficient(grid, d_default):
    D = ScalarField.constant(grid, 1.0)
    rep = verify_assumptions(d_default, D, grid)
    assert rep.min_hessian_eig == pytest.approx(2.4, abs=1e-6)
    assert rep.min_grad_ratio == pytest.approx(4.8, abs=1e-6)
    assert rep.m0 == pytest.approx(0.6, abs=1e-12)
    assert rep.passes_A1 and rep.passes_A2


def test_assumptions_gamma0_normal_derivative():
    g = build_grid(UNIT, 101, KBOX, ("left", "bottom"))
    d = build_quadratic_d(g, (-0.5, -0.5), 1.2)
    D = ScalarField.constant(g, 1.0)
    rep = verify_assumptions(d, D, g)
    # grad d points away from x0, so the left/bottom normal derivative is negative
    assert rep.max_normal_deriv_gamma0 < 0.0
    assert rep.passes_A1
    # flipping the unobserved set to the far edges must fail A1
    g2 = build_grid(UNIT, 101, KBOX, ("right", "top"))
    rep2 = verify_assumptions(d, D, g2)
    assert rep2.max_normal_deriv_gamma0 > 0.0
    assert not rep2.passes_A1


def _bump_coefficient(grid, amp, rho):
    X, Y = grid.meshes()
    s = np.minimum(((X - 0.5) ** 2 + (Y - 0.5) ** 2) / rho**2, 1.0)
    return ScalarField(grid, 1.0 + amp * (1.0 - s) ** 3)


def test_assumptions_with_bump_reported_numerically(grid, d_default):
    # a strong bump: the report carries whatever the node scan finds,
    # and the flags must be consistent with the raw margins
    rep = verify_assumptions(d_default, _bump_coefficient(grid, 0.3, 0.15), grid)
    assert math.isfinite(rep.min_hessian_eig)
    assert math.isfinite(rep.min_grad_ratio)
    tol = 1e-8
    assert rep.passes_A1 == (
        rep.min_hessian_eig >= 2 - tol
        and rep.max_normal_deriv_gamma0 <= tol
        and rep.m0 > 0
    )
    assert rep.passes_A2 == (rep.min_grad_ratio > 4.0)


def test_assumptions_hold_for_gentle_bump(grid):
    d = build_quadratic_d(grid, (-0.15, -0.15), 1.5)
    rep = verify_assumptions(d, _bump_coefficient(grid, 0.05, 0.3), grid)
    assert rep.passes_A1 and rep.passes_A2


def test_failing_scale_reported_not_raised(grid):
    d = build_quadratic_d(grid, (-0.5, -0.5), 1.01)
    D = ScalarField.constant(grid, 1.0)
    rep = verify_assumptions(d, D, grid)
    assert rep.passes_A1  # Hessian 2.02 >= 2
    assert rep.min_grad_ratio == pytest.approx(4.04, abs=1e-6)
    assert rep.passes_A2


def test_t0_value_and_homogeneity(grid, d_default):
    t0 = compute_T0(d_default)
    assert t0 == pytest.approx(2.0 * math.sqrt(5.4), abs=1e-12)
    d4 = ScalarField(grid, 4.0 * d_default.values)
    assert compute_T0(d4) == pytest.approx(2.0 * t0, rel=1e-14)


def test_t0_monotone_and_resolution_independent(d_default):
    g2 = build_grid(UNIT, 201, KBOX)
    d2 = build_quadratic_d(g2, (-0.5, -0.5), 1.2)
    # max is attained at the corner node, present at every resolution
    assert compute_T0(d2) == pytest.approx(compute_T0(d_default), abs=1e-14)
    bigger = ScalarField(d_default.grid, d_default.values + 0.3)
    assert compute_T0(bigger) > compute_T0(d_default)


def test_build_weight_reference_values(d_default):
    w = build_weight(d_default, 5.0)
    assert w.delta == pytest.approx(0.425, abs=1e-12)
    assert w.c == pytest.approx(0.949, abs=1e-12)
    assert w.sigma == pytest.approx(0.3, abs=1e-12)
    assert w.t1 == pytest.approx(math.sqrt(0.6 / (2 * 0.949)), abs=1e-12)
    assert w.t0 == -w.t1
    w.validate()


def test_build_weight_invariants_hold_generically(d_default):
    for T in (4.7, 5.0, 6.0, 9.5):
        w = build_weight(d_default, T)
        w.validate()
        assert w.T0 < w.T
        assert 0.0 < w.c < 1.0
        assert w.c * T * T > 4.0 * w.max_d + 4.0 * w.delta
        # phi at |t| = T sits below -delta for every node
        assert w.phi_values(T).max() <= -w.delta + 1e-12
        # phi(.,t) <= phi(.,0)
        for t in np.linspace(-T, T, 7):
            assert np.all(w.phi_values(t) <= w.phi_values(0.0) + 1e-15)


def test_build_weight_rejects_short_horizon(d_default):
    with pytest.raises(ValueError):
        build_weight(d_default, compute_T0(d_default))


def test_q_sigma_mask_slices(grid, d_default):
    w = build_weight(d_default, 5.0)
    masks = q_sigma_mask(w, grid, [0.0, w.T])
    # at t=0 all of the domain is inside (sigma < m0 <= d)
    assert masks[0].all()
    # at t=T the slice is empty (phi <= -delta < sigma)
    assert not masks[1].any()


def test_q_sigma_membership_threshold(grid, d_default):
    w = build_weight(d_default, 5.0)
    i, j = 0, 0  # node with d = 0.6
    t_star = math.sqrt((0.6 - w.sigma) / w.c)
    inside = q_sigma_mask(w, grid, [t_star - 1e-6])
    outside = q_sigma_mask(w, grid, [t_star + 1e-6])
    assert inside[0, i, j]
    assert not outside[0, i, j]


def test_q_sigma_monotone_in_abs_t(grid, d_default):
    w = build_weight(d_default, 5.0)
    ts = np.linspace(0.0, w.T, 9)
    masks = q_sigma_mask(w, grid, ts)
    for a in range(len(ts) - 1):
        assert np.all(masks[a + 1] <= masks[a])
