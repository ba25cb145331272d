"""Streaming input/gradient second moments for one linear layer."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError, NumericalError, UndefinedCorrelationError
from .factorizations import CholeskyFactor, cholesky, dampen
from .linalg import as_matrix, frobenius_norm_sq

DEFAULT_DAMPENING = 0.1


@dataclass(frozen=True, eq=False)
class CovariancePair:
    """Normalized, dampened ``c_x`` (n x n) and ``c_g`` (m x m) for one layer.

    The Kronecker product of the two is the curvature model for the layer's
    flattened weights. Cholesky factors are computed lazily and cached.
    """

    c_x: np.ndarray
    c_g: np.ndarray
    dampening: float = 0.0
    tokens: int = 0

    @property
    def n(self) -> int:
        return self.c_x.shape[0]

    @property
    def m(self) -> int:
        return self.c_g.shape[0]

    @cached_property
    def l_x(self) -> CholeskyFactor:
        return cholesky(self.c_x, self.dampening)

    @cached_property
    def l_g(self) -> CholeskyFactor:
        return cholesky(self.c_g, self.dampening)

    @classmethod
    def identity(cls, m: int, n: int) -> "CovariancePair":
        return cls(np.eye(n), np.eye(m))

    @classmethod
    def from_matrices(cls, c_x, c_g, dampening: float = 0.0, tokens: int = 0) -> "CovariancePair":
        """Build a pair from raw covariances, dampening each by ``dampening``."""
        return cls(
            dampen(as_matrix(c_x, "c_x"), dampening),
            dampen(as_matrix(c_g, "c_g"), dampening),
            dampening,
            tokens,
        )


@dataclass
class CovarianceAccumulator:
    """Running sums of ``X X^T``, ``G G^T`` and optionally ``X G^T``.

    ``X`` is ``n x t`` (inputs, one column per token) and ``G`` is ``m x t``
    (gradients of the loss with respect to the layer output).
    """

    layer_id: str
    n: int
    m: int
    track_xg: bool = False
    sum_xx: np.ndarray = field(init=False)
    sum_gg: np.ndarray = field(init=False)
    sum_xg: np.ndarray | None = field(init=False)
    tokens_seen: int = field(init=False, default=0)

    def __post_init__(self):
        self.sum_xx = np.zeros((self.n, self.n))
        self.sum_gg = np.zeros((self.m, self.m))
        self.sum_xg = np.zeros((self.n, self.m)) if self.track_xg else None

    def accumulate(self, x_batch: np.ndarray, g_batch: np.ndarray) -> "CovarianceAccumulator":
        x = np.asarray(x_batch, dtype=np.float64)
        g = np.asarray(g_batch, dtype=np.float64)
        if x.ndim != 2 or g.ndim != 2:
            raise DimensionError("activation and gradient batches must be 2-D")
        if x.shape[0] != self.n or g.shape[0] != self.m:
            raise DimensionError(
                f"layer {self.layer_id}: expected X with {self.n} rows and G with {self.m} rows, "
                f"got {x.shape} and {g.shape}"
            )
        if x.shape[1] != g.shape[1]:
            raise DimensionError(
                f"layer {self.layer_id}: token counts differ ({x.shape[1]} vs {g.shape[1]})"
            )
        self.sum_xx += x @ x.T
        self.sum_gg += g @ g.T
        if self.sum_xg is not None:
            self.sum_xg += x @ g.T
        self.tokens_seen += x.shape[1]
        return self

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if (other.n, other.m) != (self.n, self.m):
            raise DimensionError(f"cannot merge accumulators of layer {self.layer_id} and {other.layer_id}")
        self.sum_xx += other.sum_xx
        self.sum_gg += other.sum_gg
        if self.sum_xg is not None:
            if other.sum_xg is None:
                raise DimensionError("cannot merge an accumulator without X G^T tracking")
            self.sum_xg += other.sum_xg
        self.tokens_seen += other.tokens_seen
        return self

    def finalize(self, dampening_fraction: float = DEFAULT_DAMPENING) -> CovariancePair:
        """Divide by the token count, then dampen both covariances."""
        if self.tokens_seen == 0:
            warnings.warn(
                f"layer {self.layer_id}: no tokens accumulated; covariances are all zero",
                RuntimeWarning,
                stacklevel=2,
            )
            c_x, c_g = self.sum_xx.copy(), self.sum_gg.copy()
        else:
            c_x = self.sum_xx / self.tokens_seen
            c_g = self.sum_gg / self.tokens_seen
        # sums are symmetric up to rounding; make it exact before factorizing
        c_x = 0.5 * (c_x + c_x.T)
        c_g = 0.5 * (c_g + c_g.T)
        return CovariancePair(
            dampen(c_x, dampening_fraction),
            dampen(c_g, dampening_fraction),
            dampening_fraction,
            self.tokens_seen,
        )

    def correlation_factor(self) -> float:
        """``||X G^T||_F^2 / (||X X^T||_F ||G G^T||_F)``, always in [0, 1]."""
        if self.sum_xg is None:
            raise ValueError(f"layer {self.layer_id}: accumulator was created without track_xg")
        if self.tokens_seen == 0:
            raise UndefinedCorrelationError(f"layer {self.layer_id}: no tokens accumulated")
        return correlation_from_sums(self.sum_xx, self.sum_gg, self.sum_xg)


def correlation_from_sums(sum_xx: np.ndarray, sum_gg: np.ndarray, sum_xg: np.ndarray) -> float:
    denom = np.sqrt(frobenius_norm_sq(sum_xx)) * np.sqrt(frobenius_norm_sq(sum_gg))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation factor undefined for a zero-norm trace")
    rho = frobenius_norm_sq(sum_xg) / denom
    if rho > 1.0 + 1e-9:
        raise NumericalError(f"correlation factor {rho} exceeds the Cauchy-Schwarz bound")
    # clip only the last-ulp excursion past the bound
    return float(min(rho, 1.0))


def correlation_factor(x: np.ndarray, g: np.ndarray) -> float:
    """Correlation factor computed directly from raw ``X`` (n x t) and ``G`` (m x t)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape[1] != g.shape[1]:
        raise DimensionError(f"token counts differ ({x.shape[1]} vs {g.shape[1]})")
    return correlation_from_sums(x @ x.T, g @ g.T, x @ g.T)
