"""Safety-aware learning-based control with GP confidence sets on scalar systems."""

from .certificates import ProblemSpec, in_Dn, lipschitz_constants
from .confidence import ConfidenceConfig, beta_sqrt, info_gain
from .gp import DerivativeGPRegressor, Measurement, NumericalConditioningError
from .kernels import SquaredExponential, make_kernel
from .simulator import TruthModel, rollout, sample_rkhs_truth, sine_bumps_truth
from .synthesis import GridPolicy, SafeSetLearner, build_grid

__version__ = "0.1.0"

__all__ = [
    "ConfidenceConfig",
    "DerivativeGPRegressor",
    "GridPolicy",
    "Measurement",
    "NumericalConditioningError",
    "ProblemSpec",
    "SafeSetLearner",
    "SquaredExponential",
    "TruthModel",
    "beta_sqrt",
    "build_grid",
    "in_Dn",
    "info_gain",
    "lipschitz_constants",
    "make_kernel",
    "rollout",
    "sample_rkhs_truth",
    "sine_bumps_truth",
]
