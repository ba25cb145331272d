"""Brute-force ground truth for the curvature-weighted low-rank problem.

Nothing here touches Cholesky factors or the SVD: losses come from the dense
``mn x mn`` Kronecker Hessian, and competitors are refined by alternating
least squares written directly in terms of the covariances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovariancePair
from .errors import DimensionError
from .linalg import kron, vec_row

ORACLE_MAX_DIM = 4096
ALS_ITERS = 25


@dataclass(frozen=True, eq=False)
class ExplicitHessian:
    h: np.ndarray  # mn x mn
    m: int
    n: int
    # which Kronecker ordering reproduced the trace form under row-major vec
    orientation: str


def trace_form(delta_w: np.ndarray, pair: CovariancePair) -> float:
    """``tr(dW^T C_g dW C_x)``."""
    return float(np.trace(delta_w.T @ pair.c_g @ delta_w @ pair.c_x))


def _quad(h: np.ndarray, delta_w: np.ndarray) -> float:
    v = vec_row(delta_w)
    return float((v @ h @ v.T)[0, 0])


def build_hessian(pair: CovariancePair, probe_seed: int = 0) -> ExplicitHessian:
    """Dense Kronecker Hessian of a layer, oriented for row-major ``vec``.

    Both orderings are built and checked against the trace form on a random
    probe; the one that agrees is kept and recorded.
    """
    m, n = pair.m, pair.n
    if m * n > ORACLE_MAX_DIM:
        raise DimensionError(f"oracle Hessian for a {m}x{n} layer exceeds mn <= {ORACLE_MAX_DIM}")
    probe = np.random.default_rng(probe_seed).standard_normal((m, n))
    target = trace_form(probe, pair)
    candidates = {
        "c_g (x) c_x": lambda: kron(pair.c_g, pair.c_x),
        "c_x (x) c_g": lambda: kron(pair.c_x, pair.c_g),
    }
    for label, build in candidates.items():
        h = build()
        if abs(_quad(h, probe) - target) <= 1e-9 * max(1.0, abs(target)):
            return ExplicitHessian(h, m, n, label)
    raise AssertionError("neither Kronecker ordering reproduces the trace form")


def quadratic_loss(hess: ExplicitHessian, delta_w: np.ndarray) -> float:
    """``vec(dW) H vec(dW)^T`` with row-major ``vec``."""
    delta_w = np.asarray(delta_w, dtype=np.float64)
    if delta_w.shape != (hess.m, hess.n):
        raise DimensionError(f"perturbation shape {delta_w.shape} does not match ({hess.m}, {hess.n})")
    return _quad(hess.h, delta_w)


def _batched_losses(hess: ExplicitHessian, w: np.ndarray, b: np.ndarray, a: np.ndarray) -> np.ndarray:
    d = (w[None] - b @ a).reshape(b.shape[0], -1)
    return np.einsum("ti,ij,tj->t", d, hess.h, d)


def _ridge(mat: np.ndarray) -> np.ndarray:
    r = mat.shape[-1]
    tr = np.trace(mat, axis1=-2, axis2=-1)
    bump = 1e-12 * np.maximum(tr, 1e-300) / r
    return mat + bump[:, None, None] * np.eye(r)


def als_refine(
    w: np.ndarray, pair: CovariancePair, b: np.ndarray, a: np.ndarray, iters: int = ALS_ITERS
):
    """Alternating least squares on ``tr((W-BA)^T C_g (W-BA) C_x)``.

    Works on stacks: ``b`` is ``(k, m, r)`` and ``a`` is ``(k, r, n)``. Yields
    every intermediate ``(b, a)`` so callers can score each iterate.
    """
    c_x, c_g = pair.c_x, pair.c_g
    for _ in range(iters):
        # A-step: (B^T C_g B) A = B^T C_g W
        btc = np.swapaxes(b, 1, 2) @ c_g
        a = np.linalg.solve(_ridge(btc @ b), btc @ w)
        yield b, a
        # B-step: B (A C_x A^T) = W C_x A^T
        xa = c_x @ np.swapaxes(a, 1, 2)
        lhs = _ridge(a @ xa)
        rhs = w @ xa
        b = np.swapaxes(np.linalg.solve(lhs, np.swapaxes(rhs, 1, 2)), 1, 2)
        yield b, a


def random_search_competitor(
    w: np.ndarray,
    pair: CovariancePair,
    r: int,
    trials: int,
    seed: int,
    als_iters: int = ALS_ITERS,
    hess: ExplicitHessian | None = None,
) -> float:
    """Best quadratic loss over ``trials`` random ``(B, A)`` starts and their ALS iterates.

    Returns ``inf`` when ``trials == 0``.
    """
    if trials <= 0:
        return float("inf")
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    hess = hess or build_hessian(pair)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(np.linalg.norm(w) / max(r, 1) + 1e-12)
    b = rng.standard_normal((trials, m, r)) * scale / np.sqrt(m)
    a = rng.standard_normal((trials, r, n)) * scale / np.sqrt(n)
    best = float(np.min(_batched_losses(hess, w, b, a)))
    for bi, ai in als_refine(w, pair, b, a, als_iters):
        best = min(best, float(np.min(_batched_losses(hess, w, bi, ai))))
    return best


def local_search_competitor(
    w: np.ndarray,
    pair: CovariancePair,
    b: np.ndarray,
    a: np.ndarray,
    trials: int,
    seed: int,
    step: float = 1e-3,
    hess: ExplicitHessian | None = None,
) -> float:
    """Best loss over random perturbations of given factors (relative step size)."""
    if trials <= 0:
        return float("inf")
    w = np.asarray(w, dtype=np.float64)
    hess = hess or build_hessian(pair)
    rng = np.random.default_rng(seed)
    nb = np.linalg.norm(b) + 1e-300
    na = np.linalg.norm(a) + 1e-300
    bs = b[None] + step * nb * rng.standard_normal((trials,) + b.shape) / np.sqrt(b.size)
    as_ = a[None] + step * na * rng.standard_normal((trials,) + a.shape) / np.sqrt(a.size)
    return float(np.min(_batched_losses(hess, w, bs, as_)))
