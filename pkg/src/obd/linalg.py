"""Dense matrix helpers.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64, C (row-major)
order. The helpers here add the shape checks and finiteness guarantees the
rest of the package relies on.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError

# Largest number of entries ``kron`` will materialise (64x64 layers -> 4096^2).
KRON_MAX_ENTRIES = 4096 * 4096


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array (1-D input becomes a row)."""
    m = np.array(a, dtype=np.float64, order="C", copy=True)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
            if a.ndim == 2 and b.ndim == 2
            else f"matmul needs 2-D operands, got {a.shape} and {b.shape}"
        )
    return check_finite(a @ b, "matmul result")


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a).T)


def frobenius_norm_sq(a: np.ndarray) -> float:
    return float(np.sum(np.square(np.asarray(a, dtype=np.float64))))


def kron(a: np.ndarray, b: np.ndarray, max_entries: int = KRON_MAX_ENTRIES) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``.

    Only meant for brute-force oracles, so the result size is capped.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > max_entries:
        raise DimensionError(
            f"kron result {rows}x{cols} exceeds the cap of {max_entries} entries"
        )
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(rows, cols)


def vec_row(a: np.ndarray) -> np.ndarray:
    """Row-wise flatten into a ``1 x (rows*cols)`` matrix."""
    return np.asarray(a, dtype=np.float64).reshape(1, -1).copy()


def unvec_row(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    if v.size != rows * cols:
        raise DimensionError(f"cannot reshape {v.size} entries to {rows}x{cols}")
    return np.asarray(v, dtype=np.float64).reshape(rows, cols).copy()


def is_symmetric(a: np.ndarray, tol: float = 1e-10) -> bool:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= tol * scale)


def require_square_symmetric(a: np.ndarray, name: str, tol: float = 1e-10) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not is_symmetric(a, tol):
        raise DimensionError(f"{name} must be symmetric within {tol:g}")
