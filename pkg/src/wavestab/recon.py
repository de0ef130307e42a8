"""Parametric coefficient recovery from a single boundary measurement.

The unknown coefficient is expanded over a small basis of smooth bumps
supported in K; the data functional is the squared trace misfit between
the time-differentiated Neumann trace of the candidate solve and the
measurement.  Minimization is projected gradient descent with central
finite-difference gradients: with at most ten coefficients, 2m+1 solves
per iteration are cheaper than a second (adjoint) PDE implementation
and keep the forward solver the single source of truth.

All solves inside one problem share a fixed time step derived from the
admissibility bound, so candidate traces stay aligned with the data
samples regardless of the current coefficient iterate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError
from .fields import Grid, ScalarField, quadrature_weights
from .geometry import compute_T0
from .norms import trace_l2
from .wave import (
    BoundaryTrace,
    KIND_DT_NORMAL,
    SolverConfig,
    dt_trace,
    solve_interior,
)

__all__ = [
    "BumpBasis",
    "ReconProblem",
    "ReconResult",
    "INADMISSIBLE_PENALTY",
    "misfit",
    "numeric_gradient",
    "reconstruct",
    "synthesize_trace_data",
]

INADMISSIBLE_PENALTY = 1e30


@dataclass(frozen=True)
class BumpBasis:
    """Smooth bump functions centred in K, the span of the unknown."""

    grid: Grid
    centers: np.ndarray = field(repr=False)  # (m, 2) coordinates
    radius: float = 0.12

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "centers", c)
        (kx0, kx1), (ky0, ky1) = self.grid.k_box
        rho = self.radius
        if np.any(c[:, 0] < kx0 + rho) or np.any(c[:, 0] > kx1 - rho) or np.any(
            c[:, 1] < ky0 + rho
        ) or np.any(c[:, 1] > ky1 - rho):
            raise ValueError("basis bumps must sit inside K with a radius margin")
        gram = self.gram()
        if np.linalg.cond(gram) > 1e8:
            raise ValueError("bump basis is numerically degenerate on this grid")

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def fields(self) -> list[np.ndarray]:
        X, Y = self.grid.meshes()
        out = []
        for cx, cy in self.centers:
            s = np.minimum(((X - cx) ** 2 + (Y - cy) ** 2) / self.radius**2, 1.0)
            out.append((1.0 - s) ** 3)
        return out

    def gram(self) -> np.ndarray:
        qw = quadrature_weights(self.grid)
        b = self.fields()
        m = len(b)
        g = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                g[i, j] = g[j, i] = float(np.sum(qw * b[i] * b[j]))
        return g

    def expand(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        total = np.zeros((self.grid.nx, self.grid.ny))
        for coeff, bump in zip(a, self.fields()):
            total += coeff * bump
        return total


@dataclass(frozen=True)
class ReconProblem:
    """Inversion setup: known background, problem data, measurement.

    ``data`` is the time-differentiated Neumann trace of the measured
    solution on the observed boundary, sampled at the problem's fixed
    step.  ``d`` is the verified convex function whose minimal horizon
    gates T.  ``a_box`` bounds each coefficient; the projection step of
    the descent clips to it.
    """

    d: ScalarField
    D_base: ScalarField
    f: ScalarField
    h_bc: object
    data: BoundaryTrace
    T: float
    basis: BumpBasis
    lam: float = 0.0
    c0: float = 4.0
    a_box: float = 0.5
    cfl_factor: float = 0.5

    def __post_init__(self):
        t0 = compute_T0(self.d)
        if not self.T > t0:
            raise HorizonError(f"T={self.T} does not exceed the minimal horizon {t0}")
        if self.data.kind != KIND_DT_NORMAL:
            raise ValueError("measurement must be a time-differentiated Neumann trace")
        if self.data.horizon < self.T - 1e-9:
            raise HorizonError("measurement does not cover the inversion window")
        if not math.isclose(self.data.dt, self.solve_dt(), rel_tol=1e-9):
            raise ValueError(
                "measurement sampling does not match the problem's solver step"
            )

    def solve_dt(self) -> float:
        return self.cfl_factor * self.D_base.grid.h / math.sqrt(2.0 * self.c0)

    def coefficient(self, a) -> np.ndarray:
        return self.D_base.values + self.basis.expand(a)

    def admissible(self, a) -> bool:
        D = self.coefficient(a)
        return bool(D.min() >= 1.0 / self.c0 - 1e-12 and D.max() <= self.c0 + 1e-12)

    def forward_trace(self, a) -> BoundaryTrace:
        grid = self.D_base.grid
        cfg = SolverConfig(horizon=self.T, cfl_factor=self.cfl_factor,
                           dt=self.solve_dt())
        _, tr = solve_interior(
            ScalarField(grid, self.coefficient(a)), self.f, None, self.h_bc, None,
            cfg, trace_on="gamma1", keep_snapshots=False,
        )
        return tr


def synthesize_trace_data(
    problem_grid: Grid,
    D_truth: ScalarField,
    f: ScalarField,
    h_bc,
    T: float,
    dt: float,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> BoundaryTrace:
    """Measurement generator: solve with the true coefficient and return
    the time-differentiated Neumann trace, optionally with additive
    Gaussian noise."""
    cfg = SolverConfig(horizon=T, dt=dt)
    _, tr = solve_interior(D_truth, f, None, h_bc, None, cfg,
                           trace_on="gamma1", keep_snapshots=False)
    out = dt_trace(tr)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        noisy = out.values + noise_sigma * rng.standard_normal(out.values.shape)
        out = out.with_values(noisy, out.kind)
    return out


def misfit(problem: ReconProblem, a) -> float:
    """J(a) = 0.5 * ||dt-trace(a) - data||^2 + lam * |a|^2.

    Inadmissible coefficients return a large penalty instead of raising,
    which keeps line searches total.
    """
    a = np.asarray(a, dtype=np.float64)
    if not problem.admissible(a):
        return INADMISSIBLE_PENALTY
    tr = dt_trace(problem.forward_trace(a))
    if not np.array_equal(tr.nodes, problem.data.nodes):
        raise ValueError("measurement trace does not cover the observed boundary")
    m = min(tr.values.shape[1], problem.data.values.shape[1])
    diff = tr.with_values(tr.values[:, :m] - problem.data.values[:, :m], tr.kind)
    resid = trace_l2(diff, problem.T)
    return 0.5 * resid * resid + problem.lam * float(np.dot(a, a))


def numeric_gradient(problem: ReconProblem, a, step: float = 1e-3) -> np.ndarray:
    """Central finite differences; probes shrink the step (up to 5
    halvings) when they leave the admissible box."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    a = np.asarray(a, dtype=np.float64)
    g = np.empty_like(a)
    for i in range(a.size):
        s = step
        for _ in range(6):
            ap = a.copy()
            am = a.copy()
            ap[i] += s
            am[i] -= s
            if problem.admissible(ap) and problem.admissible(am):
                g[i] = (misfit(problem, ap) - misfit(problem, am)) / (2.0 * s)
                break
            s *= 0.5
        else:
            raise ValueError(f"could not find admissible probes for coordinate {i}")
    return g


@dataclass(frozen=True)
class ReconResult:
    a_hat: np.ndarray
    iterations: tuple  # rows (iter, J, grad_norm, a tuple)
    status: str

    def write_csv(self, path) -> None:
        m = len(self.a_hat)
        with open(path, "w", newline="") as fh:
            fh.write("iter,J,grad_norm," + ",".join(f"a{i+1}" for i in range(m)) + "\n")
            for it, J, gn, a in self.iterations:
                fh.write(
                    f"{it},{J:.17g},{gn:.17g},"
                    + ",".join(format(x, ".17g") for x in a) + "\n"
                )


def reconstruct(
    problem: ReconProblem,
    a_init,
    max_iter: int = 200,
    grad_tol: float = 1e-8,
    fd_step: float = 1e-3,
    armijo: float = 1e-4,
    backtrack: float = 0.5,
) -> ReconResult:
    """Projected gradient descent with backtracking line search.

    Steps start at unit length and halve until the projected Armijo
    decrease holds; iterates are clipped to the coefficient box.  The
    loop stops at the gradient tolerance, the iteration cap, or when a
    line search fails outright: the objective and gradient are
    deterministic, so an iteration that cannot decrease J would repeat
    identically forever and is aborted at once.
    """
    a = np.clip(np.asarray(a_init, dtype=np.float64), -problem.a_box, problem.a_box)
    J = misfit(problem, a)
    log = []
    best_a, best_j = a.copy(), J
    status = "max_iterations"
    gn = math.inf

    for it in range(max_iter):
        g = numeric_gradient(problem, a, fd_step)
        gn = float(np.linalg.norm(g))
        log.append((it, J, gn, tuple(a)))
        if gn <= grad_tol:
            status = "gradient_converged"
            break

        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = np.clip(a - alpha * g, -problem.a_box, problem.a_box)
            decrease = float(np.dot(g, a - cand))
            Jc = misfit(problem, cand)
            if Jc <= J - armijo * decrease and Jc < J:
                a, J = cand, Jc
                accepted = True
                break
            alpha *= backtrack
        if accepted:
            if J < best_j:
                best_a, best_j = a.copy(), J
        else:
            status = "stalled"
            break

    if log and log[-1][3] != tuple(a):
        log.append((log[-1][0] + 1, J, gn, tuple(a)))
    if J < best_j:
        best_a, best_j = a.copy(), J
    return ReconResult(a_hat=best_a, iterations=tuple(log), status=status)
