"""Convex-function geometry: admissibility checks and the space-time weight.

The stability machinery needs a strictly convex function d (in the metric
rescaled by the reciprocal coefficient), positive on the closed domain,
with controlled normal derivative on the unobserved boundary and
|grad d|^2/d bounded away from 4.  From d and an observation horizon T we
build the weight phi(x, t) = d(x) - c*t^2 together with the constants
(c, delta, sigma, t0, t1) that make it pseudo-convex on the slab.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .fields import Grid, ScalarField, gradient, second_derivatives

__all__ = [
    "ConvexWeight",
    "GeometryReport",
    "build_quadratic_d",
    "verify_assumptions",
    "compute_T0",
    "build_weight",
    "q_sigma_mask",
]


@dataclass(frozen=True)
class GeometryReport:
    """Raw margins and pass flags for the two geometric assumptions.

    A1 requires the rescaled metric Hessian of d to dominate 2*Identity,
    a non-positive normal derivative of d on the unobserved boundary, and
    a positive minimum m0 of d.  A2 requires the metric gradient-squared
    to exceed 4*d everywhere.  ``max_normal_deriv_gamma0`` is -inf when
    the unobserved set is empty.
    """

    min_hessian_eig: float
    max_normal_deriv_gamma0: float
    min_grad_ratio: float
    m0: float
    passes_A1: bool
    passes_A2: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "min_hessian_eig": self.min_hessian_eig,
                "max_normal_deriv_gamma0": self.max_normal_deriv_gamma0,
                "min_grad_ratio": self.min_grad_ratio,
                "m0": self.m0,
                "passes_A1": self.passes_A1,
                "passes_A2": self.passes_A2,
            },
            indent=2,
        )


@dataclass(frozen=True)
class ConvexWeight:
    """The weight phi(x,t) = d(x) - c*t^2 with its derived constants.

    Invariants established at construction and re-checked by
    ``validate``:

    * T exceeds the minimal horizon T0 = 2*sqrt(max d),
    * c in (0, 1) with c*T^2 > 4*max_d + 4*delta,
    * max_d - c*T^2 <= -delta (phi <= -delta at |t| = T),
    * 0 < sigma < m0 and phi >= sigma on the window [t0, t1],
    * m0 > 0.
    """

    d: ScalarField
    T: float
    T0: float
    c: float
    delta: float
    sigma: float
    t0: float
    t1: float
    m0: float
    max_d: float

    def phi_values(self, t: float) -> np.ndarray:
        return self.d.values - self.c * t * t

    def validate(self) -> None:
        eps = 1e-12 * max(1.0, self.max_d, self.T * self.T)
        if not self.T > self.T0:
            raise ValueError("horizon T does not exceed T0")
        if not (0.0 < self.c < 1.0):
            raise ValueError("weight speed c outside (0, 1)")
        if not self.c * self.T**2 > 4.0 * self.max_d + 4.0 * self.delta:
            raise ValueError("c*T^2 fails to clear 4*max_d + 4*delta")
        if not self.max_d - self.c * self.T**2 <= -self.delta:
            raise ValueError("phi(.,T) does not reach -delta")
        if not self.m0 > 0.0:
            raise ValueError("d is not positive on the closed domain")
        if not (0.0 < self.sigma < self.m0):
            raise ValueError("sigma outside (0, m0)")
        window_min = self.m0 - self.c * self.t1 * self.t1
        if not window_min >= self.sigma - eps:
            raise ValueError("phi drops below sigma inside [t0, t1]")
        if not (-self.T < self.t0 < 0.0 < self.t1 < self.T and self.t0 == -self.t1):
            raise ValueError("time window not symmetric inside (-T, T)")


def build_quadratic_d(grid: Grid, x0, k: float) -> ScalarField:
    """d(x) = k * |x - x0|^2 for a point x0 strictly outside the domain.

    With k > 1 this satisfies both assumptions for a unit coefficient:
    the Hessian is 2k*Identity and |grad d|^2/d = 4k > 4 exactly.
    """
    (ax, bx), (ay, by) = grid.extents
    px, py = float(x0[0]), float(x0[1])
    if ax <= px <= bx and ay <= py <= by:
        raise ValueError("x0 must lie strictly outside the closure of the domain")
    if not k > 1.0:
        raise ValueError("scale k must exceed 1")
    X, Y = grid.meshes()
    return ScalarField(grid, k * ((X - px) ** 2 + (Y - py) ** 2))


def _metric_hessian_min_eig(d: ScalarField, D: ScalarField) -> float:
    """Min over nodes of the smallest eigenvalue of D * Hess_g(d).

    For the conformal metric g = D^{-1} dx^2 write g_ij = e^{2 psi}
    delta_ij with psi = -0.5*log D.  The Christoffel symbols are
    Gamma^k_ij = delta_ik dpsi_j + delta_jk dpsi_i - delta_ij dpsi_k, and
    (Hess_g d)_ij = d_ij - Gamma^k_ij d_k.  The convexity condition
    Hess_g d(X, X) >= 2 |X|_g^2 is equivalent to D * Hess_g d >= 2*Id
    since g is D^{-1} times the identity.
    """
    psi = ScalarField(d.grid, -0.5 * np.log(D.values))
    px, py = (g.values for g in gradient(psi))
    dx, dy = (g.values for g in gradient(d))
    dxx, dyy = (s.values for s in second_derivatives(d))
    dxy = gradient(gradient(d)[0])[1].values

    h11 = dxx - (px * dx - py * dy)
    h12 = dxy - (py * dx + px * dy)
    h22 = dyy - (py * dy - px * dx)

    a = D.values * h11
    b = D.values * h12
    c = D.values * h22
    lam_min = 0.5 * (a + c) - np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return float(lam_min.min())


def _normal_derivative_max(d: ScalarField, edges: tuple[str, ...]) -> float:
    """Max outward normal derivative of d over the unobserved edges.

    Each edge is checked with its own normal over all of its nodes,
    corners included; a corner shared with an observed edge is only
    tested against the unobserved edge's normal.
    """
    if not edges:
        return -math.inf
    dx, dy = (g.values for g in gradient(d))  # one-sided on the boundary
    best = -math.inf
    if "left" in edges:
        best = max(best, float((-dx[0, :]).max()))
    if "right" in edges:
        best = max(best, float(dx[-1, :].max()))
    if "bottom" in edges:
        best = max(best, float((-dy[:, 0]).max()))
    if "top" in edges:
        best = max(best, float(dy[:, -1].max()))
    return best


def verify_assumptions(
    d: ScalarField, D: ScalarField, grid: Grid, tol: float = 1e-8
) -> GeometryReport:
    """Check both geometric assumptions for d under the metric D^{-1} dx^2.

    Violations are reported through the flags, never raised: the caller
    decides whether a failing geometry is fatal.
    """
    if np.any(D.values <= 0.0):
        raise ValueError("coefficient must be strictly positive")
    if np.any(d.values <= 0.0):
        raise ValueError("d must be strictly positive on the closed domain")

    min_eig = _metric_hessian_min_eig(d, D)
    max_nd = _normal_derivative_max(d, grid.gamma0_edges)

    dx, dy = (g.values for g in gradient(d))
    grad_sq_metric = D.values * (dx * dx + dy * dy)
    min_ratio = float((grad_sq_metric / d.values).min())
    m0 = float(d.values.min())

    passes_a1 = (min_eig >= 2.0 - tol) and (max_nd <= tol) and (m0 > 0.0)
    passes_a2 = min_ratio > 4.0
    return GeometryReport(
        min_hessian_eig=min_eig,
        max_normal_deriv_gamma0=max_nd,
        min_grad_ratio=min_ratio,
        m0=m0,
        passes_A1=passes_a1,
        passes_A2=passes_a2,
    )


def compute_T0(d: ScalarField) -> float:
    """Minimal observation horizon 2*sqrt(max d)."""
    if np.any(d.values <= 0.0):
        raise ValueError("d must be strictly positive")
    return 2.0 * math.sqrt(float(d.values.max()))


def build_weight(d: ScalarField, T: float) -> ConvexWeight:
    """Select (c, delta, sigma, t0, t1) for phi = d - c*t^2 at horizon T.

    The choices are the reproducible closed forms

        delta = (T^2 - 4*max_d) / 8,
        c     = (4*max_d + 5*delta) / T^2,
        sigma = m0 / 2,   t1 = sqrt(m0 / (2c)),   t0 = -t1,

    which satisfy every invariant by construction: delta takes half the
    available slack so c lands strictly inside (0, 1), and the window
    minimum of phi equals sigma exactly.
    """
    T = float(T)
    T0 = compute_T0(d)
    if not T > T0:
        raise ValueError(f"horizon T={T} must exceed T0={T0}")
    max_d = float(d.values.max())
    m0 = float(d.values.min())
    delta = (T * T - 4.0 * max_d) / 8.0
    c = (4.0 * max_d + 5.0 * delta) / (T * T)
    sigma = m0 / 2.0
    t1 = math.sqrt(m0 / (2.0 * c))
    w = ConvexWeight(
        d=d, T=T, T0=T0, c=c, delta=delta, sigma=sigma, t0=-t1, t1=t1,
        m0=m0, max_d=max_d,
    )
    w.validate()
    return w


def q_sigma_mask(weight: ConvexWeight, grid: Grid, times) -> np.ndarray:
    """Membership mask of {phi >= sigma} over grid x times.

    Returns a boolean array of shape (len(times), nx, ny).
    """
    ts = np.asarray(times, dtype=np.float64)
    phi = weight.d.values[None, :, :] - weight.c * (ts * ts)[:, None, None]
    return phi >= weight.sigma
