"""Low-rank KV cache: per-head V projections and curvature-whitened key PCA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovariancePair
from .decomposer import LowRankFactors, Mode, decompose_rank
from .errors import DimensionError
from .factorizations import CholeskyFactor, cholesky, sym_eig, triangular_solve_lower_right
from .linalg import as_matrix


@dataclass(frozen=True)
class HeadPartition:
    num_heads: int
    head_dim: int

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise DimensionError("num_heads and head_dim must be positive")

    @property
    def rows(self) -> int:
        return self.num_heads * self.head_dim

    def slices(self) -> list[slice]:
        h = self.head_dim
        return [slice(i * h, (i + 1) * h) for i in range(self.num_heads)]

    @classmethod
    def for_rows(cls, m: int, num_heads: int) -> "HeadPartition":
        if num_heads < 1 or m % num_heads:
            raise DimensionError(f"{m} rows cannot be split evenly into {num_heads} heads")
        return cls(num_heads, m // num_heads)


def decompose_v_per_head(
    w_v: np.ndarray,
    c_x: np.ndarray,
    per_head_c_g: list[np.ndarray],
    part: HeadPartition,
    r: int,
) -> list[LowRankFactors]:
    """Decompose each head's row block with the shared ``c_x`` and its own ``c_g``.

    Covariances are taken as given (already dampened).
    """
    w_v = as_matrix(w_v, "w_v")
    if w_v.shape[0] != part.rows:
        raise DimensionError(f"w_v has {w_v.shape[0]} rows, partition expects {part.rows}")
    if len(per_head_c_g) != part.num_heads:
        raise DimensionError(f"expected {part.num_heads} gradient covariances, got {len(per_head_c_g)}")
    c_x = as_matrix(c_x, "c_x")
    out = []
    for rows, c_g in zip(part.slices(), per_head_c_g):
        c_g = as_matrix(c_g, "c_g")
        if c_g.shape != (part.head_dim, part.head_dim):
            raise DimensionError(f"head covariance must be {part.head_dim}x{part.head_dim}, got {c_g.shape}")
        out.append(decompose_rank(w_v[rows], CovariancePair(c_x, c_g), r, Mode.OBD))
    return out


def stack_heads(factors: list[LowRankFactors]) -> np.ndarray:
    """Full ``w_v`` approximation: per-head products stacked along rows."""
    return np.vstack([f.product() for f in factors])


@dataclass(frozen=True, eq=False)
class KCompressor:
    """Maps key rows ``k`` (1 x d) to ``r`` cached reals and back.

    ``code = (k @ L_K) @ u_r``; reconstruction solves ``k_hat @ L_K = code @ u_r^T``.
    """

    l_k: CholeskyFactor
    u_r: np.ndarray  # d x r
    reconstruct: np.ndarray  # r x d, rows are u_r^T pushed back through L_K
    rank: int
    eigenvalues: np.ndarray  # whitened scatter spectrum, descending

    @property
    def dim(self) -> int:
        return self.l_k.dim

    @property
    def compression_ratio(self) -> float:
        return 1.0 - self.rank / self.dim


def fit_k_compressor(k_samples: np.ndarray, h_k: np.ndarray, r: int) -> KCompressor:
    """PCA of keys in the space whitened by the Cholesky factor of ``h_k``.

    ``k_samples`` holds one key per row (t x d); ``h_k`` is d x d and must
    already be dampened.
    """
    k = as_matrix(k_samples, "k_samples")
    h_k = as_matrix(h_k, "h_k")
    t, d = k.shape
    if h_k.shape != (d, d):
        raise DimensionError(f"h_k must be {d}x{d}, got {h_k.shape}")
    if not 1 <= r <= d:
        raise DimensionError(f"rank must lie in [1, {d}], got {r}")
    l_k = cholesky(h_k)
    k_white = k @ l_k.l
    scatter = k_white.T @ k_white
    eig = sym_eig(0.5 * (scatter + scatter.T))
    u_r = np.ascontiguousarray(eig.u[:, :r])
    back = triangular_solve_lower_right(l_k, np.ascontiguousarray(u_r.T))
    return KCompressor(l_k, u_r, back, r, eig.lam)


def compress(comp: KCompressor, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim == 1:
        k = k.reshape(1, -1)
    if k.shape[1] != comp.dim:
        raise DimensionError(f"key has {k.shape[1]} entries, compressor expects {comp.dim}")
    return (k @ comp.l_k.l) @ comp.u_r


def reconstruct(comp: KCompressor, code: np.ndarray) -> np.ndarray:
    code = np.asarray(code, dtype=np.float64)
    if code.ndim == 1:
        code = code.reshape(1, -1)
    if code.shape[1] != comp.rank:
        raise DimensionError(f"code has {code.shape[1]} entries, compressor rank is {comp.rank}")
    return triangular_solve_lower_right(comp.l_k, code @ comp.u_r.T)


def metric_error(comp: KCompressor, k_samples: np.ndarray, h_k: np.ndarray) -> float:
    """Total ``(k - k_hat) H_K (k - k_hat)^T`` over the rows of ``k_samples``."""
    k = np.asarray(k_samples, dtype=np.float64)
    diff = k - reconstruct(comp, compress(comp, k))
    return float(np.einsum("ti,ij,tj->", diff, h_k, diff))
