"""Measurement functionals: the Delta-norm, trace norms, and the ratio.

The Delta-norm sqrt(int(|lap F|^2 + |grad F|^2 + |F|^2)) measures the
coefficient difference; the trace norm is the L2 norm of a boundary
trace over the observed arc and a time window.  Both use the same
second-order operators as the solver, so consistent discretization
errors cancel in ratio comparisons.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import HorizonError
from .fields import ScalarField, gradient, integrate, laplacian
from .wave import BoundaryTrace, KIND_DT_NORMAL

__all__ = ["StabilityRatio", "delta_norm", "trace_l2", "stability_ratio"]


@dataclass(frozen=True)
class StabilityRatio:
    """A single Lipschitz-ratio record.

    ``ratio`` is delta_norm_F / trace_misfit when the misfit is
    positive; when both sides vanish the record is flagged undefined
    (``defined`` False) and the ratio is NaN.  A nonzero numerator over
    a vanishing misfit yields +inf, signalling data that cannot see the
    perturbation at all.
    """

    delta_norm_F: float
    trace_misfit: float
    ratio: float
    defined: bool


def delta_norm(F: ScalarField) -> float:
    """sqrt of the trapezoidal integral of |lap F|^2 + |grad F|^2 + F^2."""
    lap = laplacian(F).values
    gx, gy = (g.values for g in gradient(F))
    dens = lap * lap + gx * gx + gy * gy + F.values * F.values
    return math.sqrt(integrate(ScalarField(F.grid, dens)))


def trace_l2(trace: BoundaryTrace, T: float) -> float:
    """L2 norm of the trace over (observed arc) x (0, T).

    Time integration is trapezoidal on the recorded samples up to the
    last step not exceeding T (T is snapped down to the sample grid);
    space integration uses the per-node arclength weights.
    """
    if trace.dt <= 0.0:
        raise ValueError("trace carries no time axis")
    m = int(math.floor(T / trace.dt + 1e-9))
    if m > trace.nt:
        raise HorizonError(
            f"requested window T={T} exceeds the recorded horizon {trace.horizon}"
        )
    if m < 1:
        return 0.0
    v = trace.values[:, : m + 1]
    wt = np.full(m + 1, trace.dt)
    wt[0] *= 0.5
    wt[-1] *= 0.5
    sq = np.sum(v * v * wt[None, :], axis=1)
    return math.sqrt(float(np.sum(trace.arc_w * sq)))


def stability_ratio(F: ScalarField, trace_diff: BoundaryTrace, T: float) -> StabilityRatio:
    """Assemble the Lipschitz ratio ||F||_Delta / ||trace misfit||."""
    if trace_diff.kind != KIND_DT_NORMAL:
        raise ValueError(
            "stability ratio expects the time-differentiated normal trace"
        )
    dn = delta_norm(F)
    misfit = trace_l2(trace_diff, T)
    if misfit > 0.0:
        return StabilityRatio(dn, misfit, dn / misfit, True)
    if dn == 0.0:
        return StabilityRatio(dn, misfit, math.nan, False)
    return StabilityRatio(dn, misfit, math.inf, True)
