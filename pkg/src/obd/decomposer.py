"""Loss-aware low-rank factorization of a linear layer.

The curvature of the loss with respect to a weight matrix ``W`` (m x n) is
modelled as ``C_x (x) C_g``. With Cholesky factors ``C_x = L_x L_x^T`` and
``C_g = L_g L_g^T`` the second-order loss of an update ``dW`` becomes
``||L_g^T dW L_x||_F^2``, so the best rank-r approximation is a truncated SVD
of ``L_g^T W L_x`` mapped back through triangular solves.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .covariance import DEFAULT_DAMPENING, CovariancePair
from .errors import DimensionError
from .factorizations import (
    CholeskyFactor,
    SvdResult,
    svd,
    triangular_solve_lower_left,
    triangular_solve_lower_right,
)
from .linalg import as_matrix, frobenius_norm_sq


class Mode(str, Enum):
    PLAIN_SVD = "plain-svd"  # ||dW||^2
    INPUT_WHITEN = "input-whiten"  # ||dW L_x||^2
    OUTPUT_WHITEN = "output-whiten"  # ||L_g^T dW||^2
    OBD = "obd"  # ||L_g^T dW L_x||^2

    def __str__(self) -> str:
        return self.value


ALL_MODES = (Mode.PLAIN_SVD, Mode.INPUT_WHITEN, Mode.OUTPUT_WHITEN, Mode.OBD)


@dataclass(frozen=True, eq=False)
class LowRankFactors:
    b: np.ndarray  # m x r
    a: np.ndarray  # r x n
    rank: int
    mode: Mode
    kfac_loss: float

    def product(self) -> np.ndarray:
        return self.b @ self.a

    @property
    def shape(self) -> tuple[int, int]:
        return self.b.shape[0], self.a.shape[1]

    @property
    def achieved_ratio(self) -> float:
        m, n = self.shape
        return 1.0 - self.rank * (m + n) / (m * n)


@dataclass(frozen=True)
class CompressionSpec:
    """Target rank (explicit, or derived from a parameter-reduction ratio)."""

    rank: int | None = None
    ratio: float | None = None
    mode: Mode = Mode.OBD
    dampening: float = DEFAULT_DAMPENING

    def __post_init__(self):
        if (self.rank is None) == (self.ratio is None):
            raise ValueError("give exactly one of rank or ratio")
        if self.ratio is not None and not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"ratio must lie in [0, 1), got {self.ratio}")
        if self.rank is not None and self.rank < 0:
            raise ValueError(f"rank must be nonnegative, got {self.rank}")
        if self.dampening < 0:
            raise ValueError(f"dampening must be nonnegative, got {self.dampening}")
        object.__setattr__(self, "mode", Mode(self.mode))

    def resolve_rank(self, m: int, n: int) -> int:
        if self.ratio is not None:
            return rank_for_ratio(m, n, self.ratio)
        return _clamp_rank(self.rank, m, n)


def _clamp_rank(r: int, m: int, n: int) -> int:
    if r > min(m, n):
        raise DimensionError(f"rank {r} exceeds min(m, n) = {min(m, n)}")
    if r < 1:
        warnings.warn(f"rank {r} clamped to 1", RuntimeWarning, stacklevel=3)
        return 1
    return r


def rank_for_ratio(m: int, n: int, ratio: float) -> int:
    """Largest rank whose factor pair removes at least ``ratio`` of the ``m*n`` weights."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must lie in [0, 1), got {ratio}")
    # exact rational arithmetic: 0.8 * 64 / 16 must floor to 3, not 3 - ulp
    keep = 1 - Fraction(ratio).limit_denominator(10**9)
    r = math.floor(keep * m * n / (m + n))
    if r < 1:
        warnings.warn(
            f"ratio {ratio} leaves no rank for a {m}x{n} layer; using rank 1",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1
    return min(r, m, n)


def achieved_ratio(m: int, n: int, r: int) -> float:
    return 1.0 - r * (m + n) / (m * n)


def _check_dims(delta_w: np.ndarray, pair: CovariancePair) -> None:
    if delta_w.shape != (pair.m, pair.n):
        raise DimensionError(
            f"weight shape {delta_w.shape} does not match covariances "
            f"(c_g {pair.m}x{pair.m}, c_x {pair.n}x{pair.n})"
        )


def kfac_loss(delta_w: np.ndarray, pair: CovariancePair) -> float:
    """Second-order loss ``||L_g^T dW L_x||_F^2`` of a weight perturbation."""
    delta_w = np.asarray(delta_w, dtype=np.float64)
    _check_dims(delta_w, pair)
    return frobenius_norm_sq(pair.l_g.l.T @ delta_w @ pair.l_x.l)


def whitening_factors(pair: CovariancePair, mode: Mode) -> tuple[CholeskyFactor, CholeskyFactor]:
    """``(L_g, L_x)`` for a mode, with identity standing in for the unused side."""
    mode = Mode(mode)
    l_g = pair.l_g if mode in (Mode.OBD, Mode.OUTPUT_WHITEN) else CholeskyFactor.identity(pair.m)
    l_x = pair.l_x if mode in (Mode.OBD, Mode.INPUT_WHITEN) else CholeskyFactor.identity(pair.n)
    return l_g, l_x


def whiten(w: np.ndarray, l_g: CholeskyFactor, l_x: CholeskyFactor) -> np.ndarray:
    return l_g.l.T @ w @ l_x.l


def color(
    svd_result: SvdResult, r: int, l_g: CholeskyFactor, l_x: CholeskyFactor
) -> tuple[np.ndarray, np.ndarray]:
    """Map the top-r whitened singular triplets back to weight space.

    Solves ``L_g^T B = U_r S_r^(1/2)`` and ``A L_x = S_r^(1/2) V_r^T``.
    """
    root = np.sqrt(svd_result.sigma[:r])
    b = triangular_solve_lower_left(l_g, svd_result.u[:, :r] * root)
    a = triangular_solve_lower_right(l_x, root[:, None] * svd_result.v[:, :r].T)
    return b, a


def decompose_rank(w: np.ndarray, pair: CovariancePair, r: int, mode: Mode = Mode.OBD) -> LowRankFactors:
    w = as_matrix(w, "weight")
    _check_dims(w, pair)
    m, n = w.shape
    r = _clamp_rank(r, m, n)
    mode = Mode(mode)
    l_g, l_x = whitening_factors(pair, mode)
    b, a = color(svd(whiten(w, l_g, l_x)), r, l_g, l_x)
    return LowRankFactors(b, a, r, mode, kfac_loss(w - b @ a, pair))


def decompose(w: np.ndarray, pair: CovariancePair, spec: CompressionSpec) -> LowRankFactors:
    """Rank-r factors ``(B, A)`` of ``w`` under ``spec.mode``.

    The reported ``kfac_loss`` always uses both covariances, whatever the
    mode optimised, so modes are directly comparable.
    """
    w = np.asarray(w)
    return decompose_rank(w, pair, spec.resolve_rank(*w.shape), spec.mode)


def decompose_all_modes(w: np.ndarray, pair: CovariancePair, r: int) -> dict[Mode, LowRankFactors]:
    return {mode: decompose_rank(w, pair, r, mode) for mode in ALL_MODES}


def compensate(
    w: np.ndarray, w_hat: np.ndarray, pair: CovariancePair, r: int, mode: Mode = Mode.OBD
) -> LowRankFactors:
    """Low-rank adapter fitted to the compression residual ``w - w_hat``.

    ``w_hat + B @ A`` is the compensated weight; ``kfac_loss`` is that of the
    remaining residual ``w - w_hat - B @ A``.
    """
    w = as_matrix(w, "weight")
    w_hat = as_matrix(w_hat, "compressed weight")
    if w.shape != w_hat.shape:
        raise DimensionError(f"weight shapes differ: {w.shape} vs {w_hat.shape}")
    return decompose_rank(w - w_hat, pair, r, mode)
