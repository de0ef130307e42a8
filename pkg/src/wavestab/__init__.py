"""wavestab: a desk-scale laboratory for single-measurement coefficient
stability in second-order hyperbolic equations.

The package builds finite-difference forward solvers for the interior
Dirichlet problem, a free-space problem on an enlarged box and an
exterior annulus problem; verifies the convexity assumptions behind the
weighted-energy machinery; realizes the inverse-source reduction and its
structural identities numerically; measures Lipschitz ratios between
coefficient differences and boundary-trace misfits; and reconstructs
coefficients from a single boundary measurement, including the
photoacoustic joint-recovery pipeline.
"""

from .errors import (
    CflError,
    CompatibilityError,
    HorizonError,
    SchemaError,
    SolverPreconditionError,
    WavestabError,
)
from .fields import (
    Grid,
    ScalarField,
    SpaceTimeField,
    build_grid,
    gradient,
    integrate,
    laplacian,
    load_csv,
    load_raw,
    quadrature_weights,
    save_csv,
    save_raw,
    second_derivatives,
)
from .geometry import (
    ConvexWeight,
    GeometryReport,
    build_quadratic_d,
    build_weight,
    compute_T0,
    q_sigma_mask,
    verify_assumptions,
)
from .norms import StabilityRatio, delta_norm, stability_ratio, trace_l2
from .stability import (
    ExperimentRow,
    PerturbationSpec,
    StabilityReport,
    l1_identity_residual,
    run_stability_experiment,
    sample_perturbation,
    sweep_horizon,
)
from .source import (
    EvenExtensionView,
    SourceDecomposition,
    Wtt0Residual,
    build_source,
    check_wtt0,
    even_extension_view,
    solve_pair,
    solve_w,
    solve_w_coupled,
)
from .wave import (
    BoundaryTrace,
    SolverConfig,
    boundary_entries,
    conserved_energy,
    dt_trace,
    embed,
    energy,
    enlarge_grid,
    exterior_normal_trace,
    neumann_trace,
    restrict_spacetime,
    solve_exterior,
    solve_free_space,
    solve_interior,
)

__version__ = "0.1.0"
