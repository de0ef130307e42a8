"""Explicit time-domain solvers, boundary traces and energies.

Three problems share one leapfrog core:

* the interior Dirichlet problem  u_tt = D*lap(u) + 2*grad(D).grad(u)
  + lap(D)*u + S  on the grid rectangle,
* the free-space problem  p_tt = c^2*lap(p)  on an enlarged box, and
* the exterior problem  u_tt = lap(u)  on the annulus between the
  rectangle and a far box.

Non-reflecting behavior comes from domain enlargement: with the far
boundary at least one horizon away, reflections cannot reach the sensors
within the recording window, so truncation is exact up to roundoff.

The marching step applies central stencils at updated nodes only;
Dirichlet nodes are imposed, never differenced.  The gradient and
Laplacian values entering the update are bitwise identical to the
``fields`` module operators at interior nodes, which is what makes the
inverse-source reduction exact at the discrete level (see ``source``).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CflError, CompatibilityError, HorizonError
from .fields import (
    Grid,
    ScalarField,
    SpaceTimeField,
    build_grid,
    gradient,
    integrate,
    laplacian,
)

__all__ = [
    "SolverConfig",
    "BoundaryTrace",
    "boundary_entries",
    "solve_interior",
    "neumann_trace",
    "dt_trace",
    "energy",
    "conserved_energy",
    "enlarge_grid",
    "embed",
    "restrict_spacetime",
    "solve_free_space",
    "solve_exterior",
    "exterior_normal_trace",
]

KIND_DIRICHLET = "dirichlet_value"
KIND_NORMAL = "normal_derivative"
KIND_DT_NORMAL = "time_derivative_of_normal_derivative"


@dataclass(frozen=True)
class SolverConfig:
    """Marching parameters: horizon, CFL fraction, snapshot decimation.

    ``dt`` overrides the default step cfl_factor*h/sqrt(2*max D); it is
    validated against the hard stability bound h/sqrt(2*max D).  Setting
    it explicitly is how paired solves share one step and how tests land
    evaluation times exactly on the grid.
    """

    horizon: float
    cfl_factor: float = 0.5
    record_stride: int = 1
    dt: float | None = None

    def __post_init__(self):
        if not (0.0 < self.cfl_factor < 1.0):
            raise CflError(f"cfl_factor must lie in (0, 1), got {self.cfl_factor}")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be a positive integer")


@dataclass(frozen=True)
class BoundaryTrace:
    """Sampled values on boundary nodes over time.

    Each node appears once; corner nodes carry the normal of the
    vertical edge that owns them.  ``arc_w`` holds per-node arclength
    quadrature weights (h on a closed boundary, h/2 at the open ends of
    a partial arc) used by the trace norms.
    """

    grid: Grid
    nodes: np.ndarray = field(repr=False)      # (N, 2) int indices
    normals: np.ndarray = field(repr=False)    # (N, 2) outward unit normals
    arc_w: np.ndarray = field(repr=False)      # (N,) arclength weights
    dt: float
    values: np.ndarray = field(repr=False)     # (N, nt+1)
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=np.int64))
        for name, dtype in (("normals", np.float64), ("arc_w", np.float64), ("values", np.float64)):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=dtype))
        for name in ("nodes", "normals", "arc_w", "values"):
            getattr(self, name).flags.writeable = False
        if self.values.shape[0] != self.nodes.shape[0]:
            raise ValueError("trace values do not match the node list")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite values")

    @property
    def nt(self) -> int:
        return self.values.shape[1] - 1

    @property
    def horizon(self) -> float:
        return self.nt * self.dt

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[1])

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        (x0, _), (y0, _) = self.grid.extents
        return (
            x0 + self.grid.h * self.nodes[:, 0],
            y0 + self.grid.h * self.nodes[:, 1],
        )

    def with_values(self, values: np.ndarray, kind: str) -> "BoundaryTrace":
        return BoundaryTrace(
            grid=self.grid,
            nodes=np.array(self.nodes),
            normals=np.array(self.normals),
            arc_w=np.array(self.arc_w),
            dt=self.dt,
            values=np.ascontiguousarray(values, dtype=np.float64),
            kind=kind,
        )

    def same_layout(self, other: "BoundaryTrace") -> bool:
        return (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and math.isclose(self.dt, other.dt, rel_tol=1e-12, abs_tol=0.0)
        )


def _boundary_cycle(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Boundary nodes in cyclic order with their primary outward normals.

    Order: bottom edge left to right, right edge upward, top edge right
    to left, left edge downward.  Corners take the left/right edge
    normal so that linear fields produce the textbook +-1 traces there.
    """
    nx, ny = grid.nx, grid.ny
    nodes, normals = [], []
    for i in range(nx):
        nodes.append((i, 0))
        if i == 0:
            normals.append((-1.0, 0.0))
        elif i == nx - 1:
            normals.append((1.0, 0.0))
        else:
            normals.append((0.0, -1.0))
    for j in range(1, ny):
        nodes.append((nx - 1, j))
        normals.append((1.0, 0.0))
    for i in range(nx - 2, -1, -1):
        nodes.append((i, ny - 1))
        normals.append((-1.0, 0.0) if i == 0 else (0.0, 1.0))
    for j in range(ny - 2, 0, -1):
        nodes.append((0, j))
        normals.append((-1.0, 0.0))
    return np.asarray(nodes, dtype=np.int64), np.asarray(normals)


def boundary_entries(grid: Grid, subset="all") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(nodes, normals, arc weights) for a boundary subset in cyclic order.

    ``subset`` is "all", "gamma0", "gamma1" or a boolean node mask.
    Weights realize the periodic trapezoid rule: h per node on the full
    closed boundary, halved at the open ends of partial runs.
    """
    if isinstance(subset, str):
        mask = {
            "all": grid.boundary_mask,
            "gamma0": grid.gamma0,
            "gamma1": grid.gamma1,
        }[subset]
    else:
        mask = subset
        if mask.shape != (grid.nx, grid.ny):
            raise ValueError("boundary mask shape does not match the grid")
        if np.any(mask & ~grid.boundary_mask):
            raise ValueError("mask selects nodes off the boundary")
    cyc_nodes, cyc_normals = _boundary_cycle(grid)
    sel = mask[cyc_nodes[:, 0], cyc_nodes[:, 1]]
    nodes = cyc_nodes[sel]
    normals = cyc_normals[sel]
    if nodes.shape[0] == 0:
        return nodes, normals, np.zeros(0)
    w = np.full(nodes.shape[0], grid.h)
    if not sel.all():
        # halve weights at the cyclic run boundaries of the selection
        m = sel.astype(np.int8)
        prev = np.roll(m, 1)
        nxt = np.roll(m, -1)
        starts = sel & (prev == 0)
        ends = sel & (nxt == 0)
        factor = np.ones(cyc_nodes.shape[0])
        factor[starts] *= 0.5
        factor[ends] *= 0.5
        w = w * factor[sel]
    return nodes, normals, w


def _one_sided_normal_values(u: np.ndarray, nodes, normals, h: float) -> np.ndarray:
    """(3 u(P) - 4 u(P-nu) + u(P-2nu)) / (2h): outward derivative from inside."""
    i = nodes[:, 0]
    j = nodes[:, 1]
    di = normals[:, 0].astype(np.int64)
    dj = normals[:, 1].astype(np.int64)
    return (
        3.0 * u[i, j] - 4.0 * u[i - di, j - dj] + u[i - 2 * di, j - 2 * dj]
    ) / (2.0 * h)


def _exterior_normal_values(u: np.ndarray, nodes, normals, h: float, off: tuple[int, int]) -> np.ndarray:
    """One-sided normal derivative using nodes on the exterior side."""
    i = nodes[:, 0] + off[0]
    j = nodes[:, 1] + off[1]
    di = normals[:, 0].astype(np.int64)
    dj = normals[:, 1].astype(np.int64)
    return (
        -3.0 * u[i, j] + 4.0 * u[i + di, j + dj] - u[i + 2 * di, j + 2 * dj]
    ) / (2.0 * h)


class _TraceRecorder:
    def __init__(self, grid: Grid, subset, nt: int, dt: float, kind: str, mode: str, off=(0, 0)):
        self.nodes, self.normals, self.arc_w = boundary_entries(grid, subset)
        self.grid = grid
        self.h = grid.h
        self.dt = dt
        self.kind = kind
        self.mode = mode  # "value", "inward", "outward"
        self.off = off
        self.values = np.empty((self.nodes.shape[0], nt + 1))

    def record(self, k: int, u: np.ndarray) -> None:
        if self.mode == "value":
            i = self.nodes[:, 0] + self.off[0]
            j = self.nodes[:, 1] + self.off[1]
            self.values[:, k] = u[i, j]
        elif self.mode == "inward":
            self.values[:, k] = _one_sided_normal_values(u, self.nodes, self.normals, self.h)
        else:
            self.values[:, k] = _exterior_normal_values(u, self.nodes, self.normals, self.h, self.off)

    def finish(self) -> BoundaryTrace:
        return BoundaryTrace(
            grid=self.grid,
            nodes=self.nodes,
            normals=self.normals,
            arc_w=self.arc_w,
            dt=self.dt,
            values=self.values,
            kind=self.kind,
        )


def _resolve_steps(config: SolverConfig, h: float, d_max: float):
    """Step size, step count and stride honouring CFL and the horizon."""
    hard = h / math.sqrt(2.0 * d_max)
    if config.dt is not None:
        dt = float(config.dt)
        if dt > hard * (1.0 + 1e-12):
            raise CflError(f"dt={dt} violates the stability bound {hard}")
    else:
        dt = config.cfl_factor * hard
    stride = int(config.record_stride)
    nt = int(math.ceil(config.horizon / dt - 1e-9))
    nt = ((nt + stride - 1) // stride) * stride
    return dt, nt, stride


def _as_source_fn(S, dt: float, nt: int, grid: Grid):
    """Normalize the source argument to a per-step callable (or None)."""
    if S is None:
        return None
    if callable(S):
        return S
    if isinstance(S, SpaceTimeField):
        if not S.grid.same_layout(grid):
            raise ValueError("source grid does not match the solve grid")
        if not math.isclose(S.dt, dt, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(
                f"source is sampled at dt={S.dt}, solver marches at dt={dt}; "
                "record the source at the solver rate or pass a callable"
            )
        if S.nt < nt:
            raise HorizonError("source recording shorter than the solve horizon")
        return lambda k, t: S.snapshots[k]
    raise TypeError("source must be None, a SpaceTimeField, or callable")


def _march(
    grid: Grid,
    D: np.ndarray,
    first_order: tuple[np.ndarray, np.ndarray] | None,
    zeroth: np.ndarray | None,
    dt: float,
    nt: int,
    stride: int,
    u0: np.ndarray,
    v0: np.ndarray | None,
    source_fn,
    set_bc,
    update_mask: np.ndarray | None,
    recorders: tuple[_TraceRecorder, ...] = (),
    record_snapshots: bool = True,
):
    """Leapfrog march shared by the three solvers.

    ``set_bc(k, out)`` writes Dirichlet values for step k into ``out``;
    with ``update_mask`` None the update runs on the full interior
    rectangle, otherwise only masked nodes are advanced and the rest are
    carried from the boundary frame.
    """
    h = grid.h
    h2 = h * h
    dt2 = dt * dt

    # the stencils below are written to be bitwise identical to the
    # fields-module operators at interior nodes (same grouping, division
    # instead of reciprocal multiplication); the inverse-source reduction
    # relies on this agreement
    def rhs(u: np.ndarray) -> np.ndarray:
        lap = np.zeros_like(u)
        lap[1:-1, 1:-1] = (u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / h2 + (
            u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]
        ) / h2
        out = D * lap
        if first_order is not None:
            dx_arr, dy_arr = first_order
            gx = np.zeros_like(u)
            gy = np.zeros_like(u)
            gx[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2.0 * h)
            gy[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * h)
            out += 2.0 * (dx_arr * gx + dy_arr * gy)
        if zeroth is not None:
            out += zeroth * u
        return out

    n_rec = nt // stride
    snaps = np.empty((n_rec + 1, grid.nx, grid.ny)) if record_snapshots else None

    u_prev = np.array(u0, dtype=np.float64)
    set_bc(0, u_prev)
    if record_snapshots:
        snaps[0] = u_prev
    for rec in recorders:
        rec.record(0, u_prev)

    # first step by Taylor expansion honoring the initial velocity
    acc = rhs(u_prev)
    if source_fn is not None:
        acc = acc + source_fn(0, 0.0)
    u_curr = u_prev + 0.5 * dt2 * acc
    if v0 is not None:
        u_curr += dt * v0
    if update_mask is not None:
        u_curr = np.where(update_mask, u_curr, 0.0)
    set_bc(1, u_curr)
    if nt >= 1:
        for rec in recorders:
            rec.record(1, u_curr)
        if record_snapshots and stride == 1:
            snaps[1] = u_curr

    for k in range(1, nt):
        acc = rhs(u_curr)
        if source_fn is not None:
            acc = acc + source_fn(k, k * dt)
        u_next = 2.0 * u_curr - u_prev + dt2 * acc
        if update_mask is not None:
            u_next = np.where(update_mask, u_next, 0.0)
        set_bc(k + 1, u_next)
        u_prev, u_curr = u_curr, u_next
        for rec in recorders:
            rec.record(k + 1, u_curr)
        if record_snapshots and (k + 1) % stride == 0:
            snaps[(k + 1) // stride] = u_curr

    if record_snapshots:
        stf = SpaceTimeField(grid=grid, dt=stride * dt, nt=n_rec, snapshots=snaps,
                             solver_dt=dt)
    else:
        stf = None
    return stf, [rec.finish() for rec in recorders]


def _interior_bc(grid: Grid, h_bc, dt: float, nt: int, f_values: np.ndarray):
    """Build the Dirichlet writer for the interior problem and check
    trace coincidence at t = 0."""
    nodes, _, _ = boundary_entries(grid, "all")
    i, j = nodes[:, 0], nodes[:, 1]
    (x0, _), (y0, _) = grid.extents
    xb = x0 + grid.h * nodes[:, 0]
    yb = y0 + grid.h * nodes[:, 1]

    if h_bc is None:
        vals_at = lambda k: 0.0
        initial = np.zeros(nodes.shape[0])
    elif isinstance(h_bc, BoundaryTrace):
        if h_bc.kind != KIND_DIRICHLET:
            raise ValueError("Dirichlet data trace must have dirichlet kind")
        if not h_bc.grid.same_layout(grid):
            raise ValueError("Dirichlet trace lives on a different grid")
        if not math.isclose(h_bc.dt, dt, rel_tol=1e-12, abs_tol=0.0):
            raise CompatibilityError(
                f"Dirichlet trace sampled at dt={h_bc.dt}, solver at dt={dt}"
            )
        if h_bc.nt < nt:
            raise HorizonError("Dirichlet trace shorter than the solve horizon")
        order = {(a, b): idx for idx, (a, b) in enumerate(map(tuple, h_bc.nodes))}
        try:
            perm = np.array([order[(a, b)] for a, b in map(tuple, nodes)])
        except KeyError:
            raise CompatibilityError("Dirichlet trace does not cover the boundary")
        tr_vals = h_bc.values[perm, :]
        vals_at = lambda k: tr_vals[:, k]
        initial = tr_vals[:, 0]
    elif callable(h_bc):
        vals_at = lambda k: np.asarray(h_bc(xb, yb, k * dt), dtype=np.float64)
        initial = np.asarray(h_bc(xb, yb, 0.0), dtype=np.float64)
    else:
        raise TypeError("h_bc must be None, a BoundaryTrace, or callable")

    scale = 1.0 + float(np.abs(f_values).max())
    mismatch = float(np.abs(initial - f_values[i, j]).max())
    if mismatch > 1e-9 * scale:
        raise CompatibilityError(
            f"boundary datum disagrees with the initial position at t=0 "
            f"(max gap {mismatch:.3e})"
        )

    def set_bc(k: int, out: np.ndarray) -> None:
        out[i, j] = vals_at(k)

    return set_bc


def solve_interior(
    D: ScalarField,
    f: ScalarField | None,
    f_vel: ScalarField | None,
    h_bc,
    S,
    config: SolverConfig,
    trace_on=None,
    keep_snapshots: bool = True,
):
    """March the interior Dirichlet problem; optionally record a trace.

    ``S`` is a SpaceTimeField sampled at the solver rate, a callable
    (step, time) -> array, or None.  With ``trace_on`` set ("gamma1",
    "all" or a mask) the one-sided Neumann trace is recorded at every
    step during the march and returned alongside the snapshots; passing
    ``keep_snapshots=False`` discards the volume recording, which keeps
    long trace-only runs within memory.
    """
    grid = D.grid
    if np.any(D.values <= 0.0):
        raise ValueError("coefficient D must be strictly positive")
    dt, nt, stride = _resolve_steps(config, grid.h, float(D.values.max()))

    f_values = f.values if f is not None else np.zeros((grid.nx, grid.ny))
    v0 = f_vel.values if f_vel is not None else None
    source_fn = _as_source_fn(S, dt, nt, grid)
    set_bc = _interior_bc(grid, h_bc, dt, nt, f_values)

    dx_f, dy_f = gradient(D)
    lap_d = laplacian(D)

    recorders = ()
    if trace_on is not None:
        recorders = (_TraceRecorder(grid, trace_on, nt, dt, KIND_NORMAL, "inward"),)

    stf, traces = _march(
        grid=grid,
        D=D.values,
        first_order=(dx_f.values, dy_f.values),
        zeroth=lap_d.values,
        dt=dt,
        nt=nt,
        stride=stride,
        u0=f_values,
        v0=v0,
        source_fn=source_fn,
        set_bc=set_bc,
        update_mask=None,
        recorders=recorders,
        record_snapshots=keep_snapshots,
    )
    if trace_on is not None:
        return stf, traces[0]
    return stf


def neumann_trace(u: SpaceTimeField, boundary="gamma1") -> BoundaryTrace:
    """One-sided second-order outward normal derivative on listed nodes,
    at every recorded time."""
    grid = u.grid
    nodes, normals, arc_w = boundary_entries(grid, boundary)
    vals = np.empty((nodes.shape[0], u.nt + 1))
    for k in range(u.nt + 1):
        vals[:, k] = _one_sided_normal_values(u.snapshots[k], nodes, normals, grid.h)
    return BoundaryTrace(
        grid=grid, nodes=nodes, normals=normals, arc_w=arc_w,
        dt=u.dt, values=vals, kind=KIND_NORMAL,
    )


def dt_trace(trace: BoundaryTrace) -> BoundaryTrace:
    """Time derivative of a Neumann trace: central inside, one-sided ends."""
    if trace.kind != KIND_NORMAL:
        raise ValueError("dt_trace expects a normal-derivative trace")
    v = trace.values
    if v.shape[1] < 3:
        raise ValueError("need at least 3 time samples to differentiate")
    dt = trace.dt
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * dt)
    out[:, 0] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * dt)
    out[:, -1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * dt)
    return trace.with_values(out, KIND_DT_NORMAL)


def _time_derivative_at(u: SpaceTimeField, k: int) -> np.ndarray:
    s = u.snapshots
    if u.nt < 2:
        raise ValueError("need at least 3 snapshots for a time derivative")
    if 0 < k < u.nt:
        return (s[k + 1] - s[k - 1]) / (2.0 * u.dt)
    if k == 0:
        return (-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * u.dt)
    return (3.0 * s[u.nt] - 4.0 * s[u.nt - 1] + s[u.nt - 2]) / (2.0 * u.dt)


def energy(u: SpaceTimeField, D: ScalarField, t_index: int) -> float:
    """The reporting energy  int(w^2 + w_t^2 + D*|grad w|^2)  at a step.

    The gradient term is the metric gradient norm of the conformal
    rescaling, which reduces to D times the Euclidean gradient squared.
    """
    w = u.snapshots[t_index]
    wt = _time_derivative_at(u, t_index)
    gx, gy = gradient(ScalarField(u.grid, w))
    dens = w * w + wt * wt + D.values * (gx.values**2 + gy.values**2)
    return integrate(ScalarField(u.grid, dens))


def conserved_energy(u: SpaceTimeField, D: ScalarField, t_index: int) -> float:
    """int(w_t^2 + D*|grad w|^2): exactly conserved by the constant-
    coefficient homogeneous problem, used as the drift oracle."""
    wt = _time_derivative_at(u, t_index)
    gx, gy = gradient(ScalarField(u.grid, u.snapshots[t_index]))
    dens = wt * wt + D.values * (gx.values**2 + gy.values**2)
    return integrate(ScalarField(u.grid, dens))


# ---------------------------------------------------------------------------
# enlarged-domain machinery for the free-space and exterior problems
# ---------------------------------------------------------------------------

def enlarge_grid(grid: Grid, margin_length: float) -> tuple[Grid, tuple[int, int]]:
    """Extend the rectangle by at least ``margin_length`` on every side.

    Returns the big grid and the integer node offset of the original
    grid inside it.  Spacing is preserved so the original boundary nodes
    coincide with big-grid nodes.
    """
    h = grid.h
    m = int(math.ceil(margin_length / h - 1e-9)) + 1
    (x0, x1), (y0, y1) = grid.extents
    big = build_grid(
        extents=((x0 - m * h, x1 + m * h), (y0 - m * h, y1 + m * h)),
        n_per_axis=grid.nx + 2 * m,
        k_box=grid.k_box,
        gamma0_spec=None,
    )
    return big, (m, m)


def embed(f: ScalarField, big: Grid, off: tuple[int, int], fill: float = 0.0) -> ScalarField:
    vals = np.full((big.nx, big.ny), float(fill))
    vals[off[0]:off[0] + f.grid.nx, off[1]:off[1] + f.grid.ny] = f.values
    return ScalarField(big, vals)


def restrict_spacetime(u: SpaceTimeField, inner: Grid, off: tuple[int, int]) -> SpaceTimeField:
    s = u.snapshots[:, off[0]:off[0] + inner.nx, off[1]:off[1] + inner.ny]
    return SpaceTimeField(grid=inner, dt=u.dt, nt=u.nt, snapshots=np.array(s),
                          solver_dt=u.solver_dt)


def _zero_edges(k: int, out: np.ndarray) -> None:
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = 0.0
    out[:, -1] = 0.0


def solve_free_space(
    c_speed: ScalarField,
    p0: ScalarField,
    inner: Grid,
    off: tuple[int, int],
    config: SolverConfig,
):
    """Free-space solve of p_tt = c^2*lap(p) on an enlarged box.

    ``c_speed`` and ``p0`` live on the enlarged grid; ``inner``/``off``
    locate the physical rectangle whose boundary acts as the sensor
    surface.  Returns the recorded field and the Dirichlet-value trace
    of p on the inner boundary at the full marching rate.  The far
    boundary is zero Dirichlet; the margin must be at least
    horizon * max(c) so reflections stay causally invisible.
    """
    big = c_speed.grid
    if np.any(c_speed.values <= 0.0):
        raise ValueError("sound speed must be strictly positive")
    if p0.grid is not big and not p0.grid.same_layout(big):
        raise ValueError("p0 must live on the enlarged grid")
    c_max = float(c_speed.values.max())
    margin = min(off) * big.h
    if margin < config.horizon * c_max - 1e-12:
        raise HorizonError(
            f"enlarged box margin {margin:.3f} is smaller than "
            f"T*max(c) = {config.horizon * c_max:.3f}"
        )

    # the inhomogeneities must be confined strictly inside the rectangle
    interior = np.zeros((big.nx, big.ny), dtype=bool)
    interior[off[0] + 1:off[0] + inner.nx - 1, off[1] + 1:off[1] + inner.ny - 1] = True
    if np.any(np.abs(c_speed.values[~interior] - 1.0) > 1e-12):
        raise ValueError("c - 1 must be supported strictly inside the rectangle")
    if np.any(np.abs(p0.values[~interior]) > 1e-12):
        raise ValueError("p0 must be supported strictly inside the rectangle")

    D = c_speed.values ** 2
    dt, nt, stride = _resolve_steps(config, big.h, float(D.max()))
    recorder = _TraceRecorder(inner, "all", nt, dt, KIND_DIRICHLET, "value", off)

    stf, traces = _march(
        grid=big, D=D, first_order=None, zeroth=None,
        dt=dt, nt=nt, stride=stride,
        u0=p0.values, v0=None, source_fn=None,
        set_bc=_zero_edges, update_mask=None,
        recorders=(recorder,),
    )
    return stf, traces[0]


def solve_exterior(h_trace: BoundaryTrace, config: SolverConfig) -> BoundaryTrace:
    """Solve u_tt = lap(u) on the annulus outside the rectangle.

    The Dirichlet value of u on the rectangle boundary is the recorded
    trace; initial data vanish (compatible only with h(.,0) = 0), the
    far box sits at least one horizon away, and the outward normal
    derivative on the rectangle boundary is formed from the exterior
    side.  Time-stepping reuses the trace sampling rate.
    """
    inner = h_trace.grid
    if h_trace.kind != KIND_DIRICHLET:
        raise ValueError("exterior solve expects a Dirichlet-value trace")
    scale = 1.0 + float(np.abs(h_trace.values).max())
    if float(np.abs(h_trace.values[:, 0]).max()) > 1e-9 * scale:
        raise CompatibilityError("h(.,0) must vanish for zero exterior initial data")

    dt = h_trace.dt
    hard = inner.h / math.sqrt(2.0)
    if dt > hard * (1.0 + 1e-12):
        raise CflError(f"trace step dt={dt} violates the unit-speed bound {hard}")
    nt = int(math.floor(config.horizon / dt + 1e-9))
    if nt > h_trace.nt:
        raise HorizonError("Dirichlet trace shorter than the requested horizon")

    big, off = enlarge_grid(inner, config.horizon)
    D = np.ones((big.nx, big.ny))

    update = np.ones((big.nx, big.ny), dtype=bool)
    update[0, :] = update[-1, :] = False
    update[:, 0] = update[:, -1] = False
    update[off[0]:off[0] + inner.nx, off[1]:off[1] + inner.ny] = False

    bi = h_trace.nodes[:, 0] + off[0]
    bj = h_trace.nodes[:, 1] + off[1]
    tv = h_trace.values

    def set_bc(k: int, out: np.ndarray) -> None:
        out[bi, bj] = tv[:, min(k, tv.shape[1] - 1)]

    recorder = _TraceRecorder(inner, "all", nt, dt, KIND_NORMAL, "outward", off)
    # march on the annulus: frozen zeros inside the rectangle and on the far box
    _, traces = _march(
        grid=big, D=D, first_order=None, zeroth=None,
        dt=dt, nt=nt, stride=max(nt, 1),
        u0=np.zeros((big.nx, big.ny)), v0=None, source_fn=None,
        set_bc=set_bc, update_mask=update,
        recorders=(recorder,), record_snapshots=False,
    )
    return traces[0]


def exterior_normal_trace(
    u_big: SpaceTimeField, inner: Grid, off: tuple[int, int], subset="all"
) -> BoundaryTrace:
    """Outward normal derivative on the inner boundary taken from the
    exterior side of an enlarged-grid field (the full-space oracle)."""
    nodes, normals, arc_w = boundary_entries(inner, subset)
    vals = np.empty((nodes.shape[0], u_big.nt + 1))
    for k in range(u_big.nt + 1):
        vals[:, k] = _exterior_normal_values(
            u_big.snapshots[k], nodes, normals, inner.h, off
        )
    return BoundaryTrace(
        grid=inner, nodes=nodes, normals=normals, arc_w=arc_w,
        dt=u_big.dt, values=vals, kind=KIND_NORMAL,
    )
