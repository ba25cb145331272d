"""Curvature-aware low-rank weight decomposition (K-FAC whitened SVD)."""
from .covariance import CovarianceAccumulator, CovariancePair, correlation_factor
from .decomposer import (
    ALL_MODES,
    CompressionSpec,
    LowRankFactors,
    Mode,
    compensate,
    decompose,
    decompose_rank,
    kfac_loss,
    rank_for_ratio,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    ManifestError,
    NotPositiveDefiniteError,
    NumericalError,
    ObdError,
    SingularFactorError,
)

__all__ = [
    "ALL_MODES",
    "CompressionSpec",
    "ConfigError",
    "ConvergenceError",
    "CovarianceAccumulator",
    "CovariancePair",
    "DimensionError",
    "LowRankFactors",
    "ManifestError",
    "Mode",
    "NotPositiveDefiniteError",
    "NumericalError",
    "ObdError",
    "SingularFactorError",
    "compensate",
    "correlation_factor",
    "decompose",
    "decompose_rank",
    "kfac_loss",
    "rank_for_ratio",
]
