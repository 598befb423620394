"""Quasi maximum likelihood estimation for Levy-driven multivariate CARMA
processes observed on an equidistant grid.

The public surface, bottom to top:

* `linalg` — matrix exponential, Lyapunov / Riccati solvers, noise Gramian;
* `statespace` — continuous and sampled linear state space models, spectra,
  structural diagnostics;
* `mcarma` — echelon-form CARMA parametrizations and model families;
* `qml` — steady-state filter, quasi log-likelihood, sandwich covariance,
  Fisher-rank identifiability probe;
* `levy` — Brownian / normal-inverse Gaussian drivers and Euler simulation;
* `estimate` — two-stage fitting driver and identifiability precheck;
* `cli` — the ``carma-qml`` command.
"""

from .errors import (
    CarmaError,
    ConvergenceError,
    DataError,
    DimensionError,
    GridError,
    NotPositiveDefiniteError,
    ParameterError,
    SingularMatrixError,
    StabilityError,
)
from .linalg import (
    expm,
    kalman_gain,
    riccati_residual,
    solve_dare,
    solve_lyapunov_ct,
    vanloan_gramian,
)
from .statespace import (
    ContinuousSSM,
    DiscreteSSM,
    StructuralReport,
    autocovariance_ct,
    sample_ct_model,
    spectral_density_ct,
    spectral_density_dt,
    structural_report,
    transfer_function,
)
from .mcarma import (
    KroneckerStructure,
    McarmaPolynomials,
    ModelFamily,
    echelon_family,
    echelon_mfd,
    echelon_ssm,
    mcarma_to_ssm,
    theta_to_model,
)
from .qml import (
    QmlEvaluation,
    SandwichCovariance,
    SteadyStateFilter,
    fisher_rank_check,
    quasi_loglik,
    quasi_loglik_discrete,
    sandwich_covariance,
    score_sequence,
    steady_state_filter,
)
from .levy import (
    BrownianParams,
    NigParams,
    SimulatedPath,
    euler_simulate,
    levy_increments,
    sample_path,
)
from .estimate import (
    EstimationResult,
    FitOptions,
    PrecheckReport,
    confidence_intervals,
    fit_qml,
    precheck_identifiability,
)

__version__ = "0.1.0"

__all__ = [
    "CarmaError",
    "ConvergenceError",
    "DataError",
    "DimensionError",
    "GridError",
    "NotPositiveDefiniteError",
    "ParameterError",
    "SingularMatrixError",
    "StabilityError",
    "expm",
    "kalman_gain",
    "riccati_residual",
    "solve_dare",
    "solve_lyapunov_ct",
    "vanloan_gramian",
    "ContinuousSSM",
    "DiscreteSSM",
    "StructuralReport",
    "autocovariance_ct",
    "sample_ct_model",
    "spectral_density_ct",
    "spectral_density_dt",
    "structural_report",
    "transfer_function",
    "KroneckerStructure",
    "McarmaPolynomials",
    "ModelFamily",
    "echelon_family",
    "echelon_mfd",
    "echelon_ssm",
    "mcarma_to_ssm",
    "theta_to_model",
    "QmlEvaluation",
    "SandwichCovariance",
    "SteadyStateFilter",
    "fisher_rank_check",
    "quasi_loglik",
    "quasi_loglik_discrete",
    "sandwich_covariance",
    "score_sequence",
    "steady_state_filter",
    "BrownianParams",
    "NigParams",
    "SimulatedPath",
    "euler_simulate",
    "levy_increments",
    "sample_path",
    "EstimationResult",
    "FitOptions",
    "PrecheckReport",
    "confidence_intervals",
    "fit_qml",
    "precheck_identifiability",
    "__version__",
]
