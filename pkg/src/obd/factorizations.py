"""Cholesky, triangular solves, one-sided Jacobi SVD and Jacobi eigensolver.

Everything is written against plain float64 ndarrays. The Jacobi routines use
a round-robin pair ordering so each round rotates disjoint column pairs at
once; with dims <= 512 this keeps the pure-numpy kernels fast enough.

No routine in this module forms an explicit matrix inverse: coloring back
from a whitened space always goes through the triangular solves.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionError,
    NotPositiveDefiniteError,
    SingularFactorError,
)
from .linalg import as_matrix, check_finite, require_square_symmetric

EPS_FLOOR = 1e-8
MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower-triangular ``l`` with ``l @ l.T`` equal to the (dampened) input."""

    l: np.ndarray
    dim: int
    dampening_applied: float = 0.0

    @classmethod
    def identity(cls, dim: int) -> "CholeskyFactor":
        return cls(np.eye(dim), dim, 0.0)


@dataclass(frozen=True, eq=False)
class SvdResult:
    u: np.ndarray  # m x k
    sigma: np.ndarray  # k, non-increasing
    v: np.ndarray  # n x k


@dataclass(frozen=True, eq=False)
class EigResult:
    u: np.ndarray  # d x d, columns are eigenvectors
    lam: np.ndarray  # descending


def dampen(c: np.ndarray, fraction: float) -> np.ndarray:
    """Return ``c + fraction * mean(diag(c)) * I``.

    An all-zero diagonal falls back to ``fraction * EPS_FLOOR * I`` so the
    result stays factorizable; a warning flags the degenerate input.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"dampen needs a square matrix, got shape {c.shape}")
    if fraction < 0:
        raise ValueError(f"dampening fraction must be nonnegative, got {fraction}")
    require_square_symmetric(c, "covariance")
    out = c.copy()
    if fraction == 0:
        return out
    mean_diag = float(np.mean(np.diag(c)))
    if mean_diag == 0.0:
        warnings.warn(
            "covariance has zero mean diagonal; dampening with the epsilon floor",
            RuntimeWarning,
            stacklevel=2,
        )
        mean_diag = EPS_FLOOR
    out[np.diag_indices_from(out)] += fraction * mean_diag
    return out


def cholesky(c: np.ndarray, dampening_applied: float = 0.0) -> CholeskyFactor:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises ``NotPositiveDefiniteError`` carrying the (0-based) index of the
    first non-positive pivot.
    """
    c = as_matrix(c, "covariance")
    require_square_symmetric(c, "covariance", tol=1e-8)
    n = c.shape[0]
    l = np.zeros_like(c)
    for j in range(n):
        row = l[j, :j]
        d = c[j, j] - row @ row
        if not d > 0.0:
            raise NotPositiveDefiniteError(j, float(d))
        ljj = np.sqrt(d)
        l[j, j] = ljj
        if j + 1 < n:
            l[j + 1 :, j] = (c[j + 1 :, j] - l[j + 1 :, :j] @ row) / ljj
    return CholeskyFactor(l, n, dampening_applied)


def _diag_checked(l: np.ndarray) -> np.ndarray:
    d = np.diag(l)
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise SingularFactorError(int(zero[0]))
    return d


def triangular_solve_lower(factor: CholeskyFactor, y: np.ndarray) -> np.ndarray:
    """Solve ``l @ b = y`` for ``b`` by forward substitution."""
    l = factor.l
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != factor.dim:
        raise DimensionError(f"rhs with shape {y.shape} does not match factor dim {factor.dim}")
    d = _diag_checked(l)
    b = np.zeros_like(y)
    for i in range(factor.dim):
        b[i] = (y[i] - l[i, :i] @ b[:i]) / d[i]
    return check_finite(b, "triangular solve result")


def triangular_solve_lower_left(factor: CholeskyFactor, y: np.ndarray) -> np.ndarray:
    """Solve ``l.T @ b = y`` for ``b`` by back substitution."""
    l = factor.l
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != factor.dim:
        raise DimensionError(f"rhs with shape {y.shape} does not match factor dim {factor.dim}")
    d = _diag_checked(l)
    n = factor.dim
    b = np.zeros_like(y)
    for i in range(n - 1, -1, -1):
        # row i of l.T above the diagonal is column i of l below it
        b[i] = (y[i] - l[i + 1 :, i] @ b[i + 1 :]) / d[i]
    return check_finite(b, "triangular solve result")


def triangular_solve_lower_right(factor: CholeskyFactor, y: np.ndarray) -> np.ndarray:
    """Solve ``a @ l = y`` for ``a``, one column of ``a`` at a time."""
    l = factor.l
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != factor.dim:
        raise DimensionError(f"rhs with shape {y.shape} does not match factor dim {factor.dim}")
    d = _diag_checked(l)
    n = factor.dim
    a = np.zeros_like(y)
    # (a @ l)[:, j] = sum_{k >= j} a[:, k] * l[k, j]
    for j in range(n - 1, -1, -1):
        a[:, j] = (y[:, j] - a[:, j + 1 :] @ l[j + 1 :, j]) / d[j]
    return check_finite(a, "triangular solve result")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of ``range(n)`` such that every pair meets once per sweep."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for k in range(size // 2):
            a, b = players[k], players[size - 1 - k]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _fix_signs(u: np.ndarray, *others: np.ndarray) -> None:
    """Flip columns in place so each column of ``u`` has its largest-|.| entry positive."""
    if u.size == 0:
        return
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1
    for o in others:
        o[:, flip] *= -1


def _orthonormal_completion(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns not flagged ``good`` with unit vectors orthogonal to the rest."""
    m, k = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(k) if good[j]]
    candidate = 0
    for j in range(k):
        if good[j]:
            continue
        while True:
            if candidate >= m:
                raise ConvergenceError("orthonormal completion", 0, float("nan"))
            vec = np.zeros(m)
            vec[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                for b in basis:
                    vec -= (b @ vec) * b
            norm = np.linalg.norm(vec)
            if norm > 1e-8:
                vec /= norm
                break
        out[:, j] = vec
        basis.append(vec)
    return out


def _jacobi_svd_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    fro_sq = float(np.sum(a * a))
    noise = (np.finfo(float).eps ** 2) * fro_sq
    rounds = _round_robin(n)
    residual = 0.0
    for sweep in range(1, MAX_SWEEPS + 1):
        residual = 0.0
        for p, q in rounds:
            if p.size == 0:
                continue
            ap, aq = work[:, p], work[:, q]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)
            scale = np.sqrt(alpha * beta)
            live = scale > noise
            rel = np.zeros_like(gamma)
            rel[live] = np.abs(gamma[live]) / scale[live]
            rot = live & (rel > JACOBI_TOL)
            if not np.any(rot):
                continue
            residual = max(residual, float(np.max(rel[rot])))
            p, q = p[rot], q[rot]
            ap, aq = ap[:, rot], aq[:, rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(zeta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            work[:, p], work[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if residual == 0.0:
            break
    else:
        raise ConvergenceError("one-sided Jacobi SVD", MAX_SWEEPS, residual)

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]
    smax = sigma[0] if sigma.size else 0.0
    good = sigma > max(m, n) * np.finfo(float).eps * smax
    good &= sigma > 0
    u = np.zeros((m, n))
    u[:, good] = work[:, good] / sigma[good]
    if not np.all(good):
        u = _orthonormal_completion(u, good)
    return u, sigma, v


def svd(w: np.ndarray) -> SvdResult:
    """Thin SVD ``w = u @ diag(sigma) @ v.T`` via one-sided Jacobi.

    Deterministic: the largest-magnitude entry of each column of ``u`` is
    positive.
    """
    w = as_matrix(w, "svd input")
    m, n = w.shape
    if m >= n:
        u, sigma, v = _jacobi_svd_tall(w)
    else:
        v, sigma, u = _jacobi_svd_tall(np.ascontiguousarray(w.T))
    _fix_signs(u, v)
    return SvdResult(u, sigma, v)


def sym_eig(s: np.ndarray) -> EigResult:
    """Eigendecomposition of a symmetric matrix by cyclic (parallel-ordered) Jacobi."""
    s = as_matrix(s, "sym_eig input")
    require_square_symmetric(s, "sym_eig input")
    d = s.shape[0]
    a = 0.5 * (s + s.T)
    u = np.eye(d)
    fro = float(np.linalg.norm(a))
    rounds = _round_robin(d)

    offdiag = ~np.eye(d, dtype=bool)

    def off_norm() -> float:
        return float(np.linalg.norm(a[offdiag]))

    off = off_norm()
    sweeps = 0
    while off > JACOBI_TOL * fro:
        sweeps += 1
        if sweeps > MAX_SWEEPS:
            raise ConvergenceError("Jacobi eigensolver", MAX_SWEEPS, off / fro)
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            rot = apq != 0.0
            if not np.any(rot):
                continue
            p, q, apq = p[rot], q[rot], apq[rot]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            # hypot avoids overflowing theta**2 when apq is tiny
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = c * t
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * cp - sn * cq, sn * cp + c * cq
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - sn[:, None] * rq, sn[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            up, uq = u[:, p], u[:, q]
            u[:, p], u[:, q] = c * up - sn * uq, sn * up + c * uq
        off = off_norm()

    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    lam, u = lam[order], u[:, order]
    _fix_signs(u)
    return EigResult(np.ascontiguousarray(u), lam)
