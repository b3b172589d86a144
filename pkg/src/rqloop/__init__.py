"""Recursive quantisation and L2 stability for intermittently observed control loops."""

from .analysis import (
    ChannelModel, StabilityReport, bernoulli_scalar_asymptotic_var, bernoulli_scalar_bound,
    capacity_threshold, markov_scalar_asymptotic_var, markov_scalar_bound,
    solve_stationary_covariance, variance_sequence_scalar, vector_bernoulli_bound,
    vector_markov_bound,
)
from .errors import (
    ConfigError, ConvergenceError, DimensionError, DivergenceError, IllPosedError,
    RQLoopError, SingularMatrixError,
)
from .lqr import LQRResult, ScalarPlant, VectorPlant, lqr_gain, scalar_lqr, solve_dare
from .simulation import (
    EnsembleStats, LoopConfig, Trace, detect_divergence, run_ensemble, run_scalar, run_vector,
)
from .switching import SwitchModel, run_streams

__version__ = "0.1.0"

__all__ = [
    "ChannelModel", "StabilityReport", "bernoulli_scalar_asymptotic_var", "bernoulli_scalar_bound",
    "capacity_threshold", "markov_scalar_asymptotic_var", "markov_scalar_bound",
    "solve_stationary_covariance", "variance_sequence_scalar", "vector_bernoulli_bound",
    "vector_markov_bound", "ConfigError", "ConvergenceError", "DimensionError", "DivergenceError",
    "IllPosedError", "RQLoopError", "SingularMatrixError", "LQRResult", "ScalarPlant",
    "VectorPlant", "lqr_gain", "scalar_lqr", "solve_dare", "EnsembleStats", "LoopConfig", "Trace",
    "detect_divergence", "run_ensemble", "run_scalar", "run_vector", "SwitchModel", "run_streams",
    "__version__",
]
