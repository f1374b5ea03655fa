"""Mode-shape expansion via Gaussian process regression.

Sparse modal measurements are expanded to every floor of a shear building
with independent per-mode GPs; the constrained variant couples the kernel
hyperparameters of all modes through a mass-orthogonality penalty on the
posterior mean shapes.
"""

from .building import (
    BuildingModel,
    MeasurementSet,
    ModeSet,
    build_shear_building,
    sample_measurements,
    solve_modes,
)
from .gp import (
    BASE_JITTER,
    DEFAULT_LOG_BOUNDS,
    NLML_SENTINEL,
    CholeskyError,
    GPDataset,
    GPPosterior,
    KernelHyper,
    covariance_matrix,
    cross_covariance,
    nlml,
    nlml_gradient,
    nlml_value_and_gradient,
    posterior,
    se_kernel,
    standardize,
)
from .optimize import (
    OptimizationReport,
    OptimizerConfig,
    SolverRun,
    gradient_audit,
    hypers_to_vector,
    max_relative_error,
    minimize_box,
    optimize_cons_sogp,
    optimize_sogp,
    vector_to_hypers,
)
from .orthogonality import (
    JOINT_SENTINEL,
    ModeBank,
    ObjectiveEvaluation,
    joint_objective,
    mass_normalize,
    normalization_jacobian,
    penalty,
    penalty_gradient_modes,
    posterior_mean_jacobian,
)
from .pipeline import (
    ExpansionResult,
    RunConfig,
    analyze_scan,
    align_sign,
    compute_mac,
    datasets_from_measurements,
    make_bank,
    nlml_scan,
    run_expansion,
    run_gradcheck,
    scan_mode,
    simulate,
)

__version__ = "0.1.0"
