"""Numerical laboratory for time-periodic drift-diffusion operators.

The package realizes a T-periodic second-order operator family as three
interoperating engines (exact Gaussian transitions for linear drift,
Euler-Maruyama particle transport, and finite-difference space-time grids),
and layers diagnostics on top: hypothesis certification, decay-rate fits,
spectral-gap and spectral-mapping checks, and Poincare / entropy inequality
residuals.
"""

from .errors import (
    Blowup,
    BoxTooSmall,
    ConfigError,
    DegenerateWindow,
    DimensionTooLarge,
    EigSolverFailure,
    IntegratorFailure,
    LabError,
    MissingGradient,
    NoiseFloor,
    NonPositiveDefinite,
    NotApplicable,
    NotDissipative,
    PerronFailure,
    QNotXIndependent,
    SolverDivergence,
    UnboundedDrift,
)
from .fields import (
    DriftTerm,
    PeriodicCoefficientField,
    SamplePlan,
    build_plan,
    gen_field,
    grad1d_field,
    polynomial_field,
)
from .hypotheses import (
    HypothesisReport,
    LyapunovResult,
    check_hypotheses,
    dissipativity_r0,
    ell_p,
    ellipticity_bounds,
    lyapunov_check,
)
from .montecarlo import (
    ParticleEnsemble,
    SimConfig,
    TangentEnsemble,
    estimate_P,
    evolve,
    lp_norm,
    sample_periodic_measure,
    tangent_gradient,
)
from .ougaussian import (
    GaussianMeasure,
    OUModel,
    PeriodicGaussianSystem,
    apply_to_exponential,
    as_field,
    covariance,
    fourier_matrix_model,
    gaussian_expectation,
    growth_bound,
    mean_shift,
    ou1d_model,
    periodic_system,
    propagator,
)

__version__ = "0.1.0"
