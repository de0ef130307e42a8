"""Grids, sampled fields, discrete differential operators and quadrature.

Everything downstream (solvers, norms, identity checks) is built on the
uniform Cartesian grid and the second-order stencils defined here.  All
operators use central differences at interior nodes and second-order
one-sided formulas at boundary nodes, so identity residuals computed with
them shrink at O(h^2).

Fields are immutable after construction and safe to share across workers.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "SpaceTimeField",
    "build_grid",
    "gradient",
    "second_derivatives",
    "laplacian",
    "integrate",
    "quadrature_weights",
    "save_csv",
    "load_csv",
    "save_raw",
    "load_raw",
]

_EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Grid:
    """Uniform node lattice on a rectangle with a boundary partition.

    Node (i, j) sits at (x_min + i*h, y_min + j*h); arrays are indexed
    values[i, j] with the x index first (row-major serialization walks x
    slices).  ``gamma0`` holds the unobserved boundary nodes, ``gamma1``
    the observed ones; together they cover the boundary exactly once.
    ``k_mask`` marks the compact set K, kept at least 2h away from the
    boundary so that fields supported in K vanish near it.
    """

    nx: int
    ny: int
    h: float
    extents: tuple[tuple[float, float], tuple[float, float]]
    k_box: tuple[tuple[float, float], tuple[float, float]]
    omega_mask: np.ndarray = field(repr=False)
    k_mask: np.ndarray = field(repr=False)
    gamma0: np.ndarray = field(repr=False)
    gamma1: np.ndarray = field(repr=False)
    gamma0_edges: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("omega_mask", "k_mask", "gamma0", "gamma1"):
            getattr(self, name).flags.writeable = False

    @property
    def x(self) -> np.ndarray:
        (x0, x1), _ = self.extents
        return np.linspace(x0, x1, self.nx)

    @property
    def y(self) -> np.ndarray:
        _, (y0, y1) = self.extents
        return np.linspace(y0, y1, self.ny)

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.nx, self.ny), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m

    def same_layout(self, other: "Grid") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and np.isclose(self.h, other.h)
            and self.extents == other.extents
        )


@dataclass(frozen=True)
class ScalarField:
    """One 64-bit real per grid node."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"field shape {v.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.meshes()
        return cls(grid, np.asarray(fn(X, Y), dtype=np.float64))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls.constant(grid, 0.0)


@dataclass(frozen=True)
class SpaceTimeField:
    """Snapshots of a scalar field at uniformly spaced times k*dt.

    ``dt`` is the spacing of the *recorded* snapshots; when a solver
    records with a stride it equals stride times the marching step
    (``solver_dt``).  ``nt`` counts recorded steps, so ``snapshots`` has
    nt+1 time slices and nt*dt covers the requested horizon.
    """

    grid: Grid
    dt: float
    nt: int
    snapshots: np.ndarray = field(repr=False)
    solver_dt: float | None = None

    def __post_init__(self):
        s = np.ascontiguousarray(self.snapshots, dtype=np.float64)
        if s.shape != (self.nt + 1, self.grid.nx, self.grid.ny):
            raise ValueError("snapshot array shape does not match (nt+1, nx, ny)")
        s.flags.writeable = False
        object.__setattr__(self, "snapshots", s)
        if self.solver_dt is None:
            object.__setattr__(self, "solver_dt", self.dt)

    @property
    def horizon(self) -> float:
        return self.nt * self.dt

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def snapshot(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.snapshots[k])

    def values_at(self, k: int) -> np.ndarray:
        return self.snapshots[k]


def build_grid(extents, n_per_axis: int, k_box, gamma0_spec=None) -> Grid:
    """Build a uniform grid on a rectangle with K and the Γ0/Γ1 split.

    ``gamma0_spec`` lists boundary edges ("left", "right", "bottom",
    "top") assigned to the unobserved set; an empty/None spec gives the
    full-observation case Γ1 = boundary, Γ0 = empty.  A corner node joins
    Γ0 as soon as either touching edge does.  K must sit strictly inside
    the rectangle with at least a 2h margin.
    """
    (x0, x1), (y0, y1) = (tuple(map(float, e)) for e in extents)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate extents")
    n = int(n_per_axis)
    if n < 3:
        raise ValueError("n_per_axis must be at least 3")
    h = (x1 - x0) / (n - 1)
    ny_f = (y1 - y0) / h
    ny = int(round(ny_f)) + 1
    if abs(ny_f - round(ny_f)) > 1e-9 or ny < 3:
        raise ValueError("extents are not commensurate with a square spacing")
    nx = n

    (kx0, kx1), (ky0, ky1) = (tuple(map(float, e)) for e in k_box)
    margin = 2.0 * h
    tol = 1e-12 * max(1.0, abs(x1), abs(y1))
    if not (
        kx0 >= x0 + margin - tol
        and kx1 <= x1 - margin + tol
        and ky0 >= y0 + margin - tol
        and ky1 <= y1 - margin + tol
        and kx1 > kx0
        and ky1 > ky0
    ):
        raise ValueError("k_box must lie inside the domain with a 2h margin")

    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    boundary = np.zeros((nx, ny), dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    boundary[:, 0] = boundary[:, -1] = True
    omega_mask = ~boundary

    k_mask = (
        (X >= kx0 - tol) & (X <= kx1 + tol) & (Y >= ky0 - tol) & (Y <= ky1 + tol)
    )
    # node-level scan of the margin requirement (distance to the boundary
    # of the rectangle, not just the box check above)
    dist = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y])
    if np.any(dist[k_mask] < margin - tol):
        raise ValueError("k_mask node closer than 2h to the boundary")

    edges = tuple(gamma0_spec) if gamma0_spec else ()
    if len(set(edges)) != len(edges):
        raise ValueError(f"duplicate edges in gamma0 spec: {edges}")
    for e in edges:
        if e not in _EDGES:
            raise ValueError(f"unknown boundary edge {e!r}")
    gamma0 = np.zeros((nx, ny), dtype=bool)
    if "left" in edges:
        gamma0[0, :] = True
    if "right" in edges:
        gamma0[-1, :] = True
    if "bottom" in edges:
        gamma0[:, 0] = True
    if "top" in edges:
        gamma0[:, -1] = True
    gamma1 = boundary & ~gamma0

    return Grid(
        nx=nx,
        ny=ny,
        h=h,
        extents=((x0, x1), (y0, y1)),
        k_box=((kx0, kx1), (ky0, ky1)),
        omega_mask=omega_mask,
        k_mask=k_mask,
        gamma0=gamma0,
        gamma1=gamma1,
        gamma0_edges=edges,
    )


def _d1(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order first derivative: central inside, 3-point one-sided at ends.

    Written in difference form so constants map to exactly zero.
    """
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (4.0 * (v[1] - v[0]) - (v[2] - v[0])) / (2.0 * h)
    out[-1] = (4.0 * (v[-1] - v[-2]) - (v[-1] - v[-3])) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _d2(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order second derivative: central inside, 4-point one-sided at ends.

    Difference form keeps constants exactly at zero.
    """
    v = np.moveaxis(v, axis, 0)
    h2 = h * h
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * (v[0] - v[1]) - 3.0 * (v[1] - v[2]) + (v[2] - v[3])) / h2
    out[-1] = (2.0 * (v[-1] - v[-2]) - 3.0 * (v[-2] - v[-3]) + (v[-3] - v[-4])) / h2
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """(df/dx, df/dy) with central stencils inside, one-sided on the boundary."""
    gx = _d1(f.values, f.grid.h, 0)
    gy = _d1(f.values, f.grid.h, 1)
    return ScalarField(f.grid, gx), ScalarField(f.grid, gy)


def second_derivatives(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """(d2f/dx2, d2f/dy2); boundary rows use one-sided 4-point formulas."""
    fxx = _d2(f.values, f.grid.h, 0)
    fyy = _d2(f.values, f.grid.h, 1)
    return ScalarField(f.grid, fxx), ScalarField(f.grid, fyy)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian at interior nodes; one-sided formulas on the boundary.

    Boundary values are diagnostic only: the wave solvers never evaluate
    the stencil at Dirichlet nodes.
    """
    lap = _d2(f.values, f.grid.h, 0) + _d2(f.values, f.grid.h, 1)
    return ScalarField(f.grid, lap)


def quadrature_weights(grid: Grid, region: np.ndarray | None = None) -> np.ndarray:
    """Per-node trapezoid weights over a region.

    Built cell-wise: every grid cell whose four corners belong to the
    region contributes h^2/4 to each corner.  On rectangles this is the
    product trapezoid rule; weights are nonnegative, so integration is
    monotone in the integrand; an empty region gives all zeros.
    """
    if region is None:
        region = np.ones((grid.nx, grid.ny), dtype=bool)
    if region.shape != (grid.nx, grid.ny):
        raise ValueError("region mask shape does not match the grid")
    cells = region[:-1, :-1] & region[1:, :-1] & region[:-1, 1:] & region[1:, 1:]
    w = np.zeros((grid.nx, grid.ny))
    cf = cells.astype(np.float64)
    w[:-1, :-1] += cf
    w[1:, :-1] += cf
    w[:-1, 1:] += cf
    w[1:, 1:] += cf
    w *= grid.h * grid.h / 4.0
    return w


def integrate(f: ScalarField, region: np.ndarray | None = None) -> float:
    """Trapezoidal quadrature of ``f`` over a node region.

    Summation order is fixed by the array layout, so results are
    deterministic; an empty region integrates to exactly 0.
    """
    w = quadrature_weights(f.grid, region)
    return float(np.sum(w * f.values))


# ---------------------------------------------------------------------------
# serialization: CSV (row-major, one value per cell) and the raw layout
# documented in the README: int64 nx, ny, reserved; float64 h; then
# nx*ny little-endian float64 values in row-major (x-major) order.
# ---------------------------------------------------------------------------

def save_csv(f: ScalarField, path) -> None:
    with open(path, "w", newline="") as fh:
        for i in range(f.grid.nx):
            fh.write(",".join(format(v, ".17g") for v in f.values[i, :]))
            fh.write("\n")


def load_csv(grid: Grid, path) -> ScalarField:
    vals = np.loadtxt(path, delimiter=",", ndmin=2)
    if vals.shape != (grid.nx, grid.ny):
        raise ValueError(f"CSV shape {vals.shape} does not match the grid")
    return ScalarField(grid, vals)


_RAW_HEADER = struct.Struct("<qqqd")


def save_raw(f: ScalarField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(f.grid.nx, f.grid.ny, 0, f.grid.h))
        fh.write(f.values.astype("<f8").tobytes(order="C"))


def load_raw(path, grid: Grid | None = None):
    """Read the raw layout; returns (nx, ny, h, values) or a ScalarField.

    With a grid supplied, the header is validated against it and a field
    on that grid is returned.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    nx, ny, _reserved, h = _RAW_HEADER.unpack_from(data, 0)
    vals = np.frombuffer(
        data, dtype="<f8", count=nx * ny, offset=_RAW_HEADER.size
    ).reshape(nx, ny)
    if grid is None:
        return nx, ny, h, vals.copy()
    if (nx, ny) != (grid.nx, grid.ny) or abs(h - grid.h) > 1e-12 * max(1.0, h):
        raise ValueError("raw header does not match the grid")
    return ScalarField(grid, vals)
