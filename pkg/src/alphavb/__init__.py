"""Temperature-regularized variational inference toolkit.

Coordinate-ascent solvers for mixture, sparse-regression, conjugate
linear, and topic models under a tempered evidence bound, plus exact
small-model machinery for checking finite-sample risk inequalities.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .divergences import (
    HELLINGER_SQ,
    KL,
    V,
    AbsoluteContinuityError,
    DiscreteDistribution,
    DivergenceError,
    DivergenceKind,
    GaussianDensity,
    MutualSingularityError,
    discrete_divergence,
    gaussian_divergence,
    monte_carlo_renyi,
    renyi,
)
from .objective import (
    AlphaConfig,
    ElboTrace,
    FactorizedVariational,
    FiniteQTheta,
    FractionalPosterior,
    ModelSpec,
    SamplingQTheta,
    alpha_objective,
    fractional_posterior_exact,
    jensen_gap,
    latent_entropy,
)
from .rng import Stream, stream

__all__ = [
    "__version__",
    "AbsoluteContinuityError",
    "AlphaConfig",
    "DiscreteDistribution",
    "DivergenceError",
    "DivergenceKind",
    "ElboTrace",
    "FactorizedVariational",
    "FiniteQTheta",
    "FractionalPosterior",
    "GaussianDensity",
    "HELLINGER_SQ",
    "KL",
    "ModelSpec",
    "MutualSingularityError",
    "SamplingQTheta",
    "Stream",
    "V",
    "alpha_objective",
    "discrete_divergence",
    "fractional_posterior_exact",
    "gaussian_divergence",
    "jensen_gap",
    "latent_entropy",
    "monte_carlo_renyi",
    "renyi",
    "stream",
]
