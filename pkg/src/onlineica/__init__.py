"""Online ICA at finite dimension and its high-dimensional scaling limit.

Finite-n simulation of the projected stochastic-gradient ICA update, the
order-parameter ODE, the limiting nonlinear Fokker-Planck PDE, and the
metrics used to compare them.
"""

from onlineica.model import (
    FeatureVector,
    PriorMeasure,
    SourceDist,
    StepSchedule,
    feature_from_prior,
    make_sparse_feature,
    sample_observation,
    source_moments,
)
from onlineica.coeffs import (
    CoeffContext,
    Nonlinearity,
    QuadratureRule,
    Regularizer,
    effective_potential,
    g_coeff,
    gamma_coeff,
    lambda_coeff,
)

__version__ = "0.1.0"

__all__ = [
    "CoeffContext",
    "FeatureVector",
    "Nonlinearity",
    "PriorMeasure",
    "QuadratureRule",
    "Regularizer",
    "SourceDist",
    "StepSchedule",
    "effective_potential",
    "feature_from_prior",
    "g_coeff",
    "gamma_coeff",
    "lambda_coeff",
    "make_sparse_feature",
    "sample_observation",
    "source_moments",
]
