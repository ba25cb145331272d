"""Self-check suite behind ``obd verify``: oracle equivalences and optimality."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .covariance import CovariancePair, correlation_factor
from .decomposer import ALL_MODES, Mode, decompose_rank, kfac_loss
from .factorizations import cholesky, svd, triangular_solve_lower
from .kvcache import fit_k_compressor, metric_error
from .oracle import build_hessian, local_search_competitor, quadratic_loss, random_search_competitor, trace_form


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_spd(rng: np.random.Generator, k: int, dampening: float = 0.1) -> np.ndarray:
    """Sample covariance of ``2k`` correlated draws plus diagonal dampening."""
    mix = rng.standard_normal((k, k)) * rng.uniform(0.2, 2.0, size=k)
    x = mix @ rng.standard_normal((k, 2 * k))
    c = x @ x.T / (2 * k)
    return c + dampening * np.mean(np.diag(c)) * np.eye(k)


def random_instance(rng: np.random.Generator, lo: int = 2, hi: int = 8):
    m, n = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    w = rng.standard_normal((m, n))
    pair = CovariancePair(random_spd(rng, n), random_spd(rng, m))
    return w, pair


def check_derivation_chain(instances: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        w, pair = random_instance(rng)
        dw = rng.standard_normal(w.shape)
        q = quadratic_loss(build_hessian(pair), dw)
        tr = trace_form(dw, pair)
        k = kfac_loss(dw, pair)
        for a, b in ((q, tr), (tr, k)):
            err = abs(a - b)
            if err > 1e-10 and err > 1e-8 * abs(b):
                return CheckResult("derivation chain", False, f"mismatch {a} vs {b}")
    return CheckResult("derivation chain", True, f"{instances} instances")


def check_optimality(instances: int, trials: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_gap = np.inf
    for i in range(instances):
        w, pair = random_instance(rng)
        r = int(rng.integers(1, min(3, *w.shape) + 1))
        obd = decompose_rank(w, pair, r, Mode.OBD)
        hess = build_hessian(pair)
        competitors = [decompose_rank(w, pair, r, m).kfac_loss for m in ALL_MODES if m is not Mode.OBD]
        competitors.append(random_search_competitor(w, pair, r, trials, seed=i, hess=hess))
        competitors.append(local_search_competitor(w, pair, obd.b, obd.a, trials, seed=i, hess=hess))
        gap = min(competitors) - obd.kfac_loss
        worst_gap = min(worst_gap, gap)
        if gap < -1e-10:
            return CheckResult("obd optimality", False, f"instance {i}: competitor beats obd by {-gap:.3e}")
        sigma = svd(pair.l_g.l.T @ w @ pair.l_x.l).sigma
        tail = float(np.sum(sigma[r:] ** 2))
        if abs(obd.kfac_loss - tail) > 1e-8 * max(tail, 1e-300) and abs(obd.kfac_loss - tail) > 1e-12:
            return CheckResult("obd optimality", False, f"instance {i}: loss {obd.kfac_loss} != tail {tail}")
    return CheckResult("obd optimality", True, f"{instances} instances, min gap {worst_gap:.3e}")


def check_coloring(instances: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        w, pair = random_instance(rng)
        r = int(rng.integers(1, min(w.shape) + 1))
        wt = pair.l_g.l.T @ w @ pair.l_x.l
        s = svd(wt)
        root = np.sqrt(s.sigma[:r])
        f = decompose_rank(w, pair, r, Mode.OBD)
        res_b = np.linalg.norm(pair.l_g.l.T @ f.b - s.u[:, :r] * root)
        res_a = np.linalg.norm(f.a @ pair.l_x.l - root[:, None] * s.v[:, :r].T)
        if max(res_b, res_a) > 1e-10 * np.linalg.norm(wt):
            return CheckResult("coloring", False, f"residuals {res_b:.3e}, {res_a:.3e}")
    return CheckResult("coloring", True, f"{instances} instances")


def whiten_covariance(f, c: np.ndarray) -> np.ndarray:
    """``L^-1 C L^-T`` by two forward substitutions (C symmetric)."""
    y = triangular_solve_lower(f, c)  # L^-1 C
    return triangular_solve_lower(f, np.ascontiguousarray(y.T))  # L^-1 (C L^-T)


def check_whitening(instances: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        k = int(rng.integers(2, 17))
        c = random_spd(rng, k)
        f = cholesky(c)
        dev = np.linalg.norm(whiten_covariance(f, c) - np.eye(k))
        if dev > 1e-8:
            return CheckResult("whitening", False, f"deviation {dev:.3e}")
    return CheckResult("whitening", True, f"{instances} instances")


def check_correlation(instances: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        n, m, t = (int(v) for v in rng.integers(1, 9, size=3))
        rho = correlation_factor(rng.standard_normal((n, t)), rng.standard_normal((m, t)))
        if not 0.0 <= rho <= 1.0:
            return CheckResult("correlation factor", False, f"rho {rho} out of range")
    x = rng.standard_normal((4, 10))
    if abs(correlation_factor(x, x) - 1.0) > 1e-10:
        return CheckResult("correlation factor", False, "rho(X, X) != 1")
    return CheckResult("correlation factor", True, f"{instances} instances")


def check_k_compressor(instances: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        d = int(rng.integers(2, 9))
        r = int(rng.integers(1, d + 1))
        keys = rng.standard_normal((64, d)) @ rng.standard_normal((d, d))
        h_k = random_spd(rng, d)
        comp = fit_k_compressor(keys, h_k, r)
        err = metric_error(comp, keys, h_k)
        tail = float(np.sum(comp.eigenvalues[r:]))
        if abs(err - tail) > 1e-8 * max(tail, 1.0):
            return CheckResult("k compressor", False, f"error {err} != dropped eigenvalues {tail}")
    return CheckResult("k compressor", True, f"{instances} instances")


def run_all(scale: int = 1, seed: int = 0) -> list[CheckResult]:
    checks: list[Callable[[], CheckResult]] = [
        lambda: check_derivation_chain(50 * scale, seed),
        lambda: check_optimality(10 * scale, 200, seed),
        lambda: check_coloring(20 * scale, seed),
        lambda: check_whitening(20 * scale, seed),
        lambda: check_correlation(200 * scale, seed),
        lambda: check_k_compressor(10 * scale, seed),
    ]
    return [c() for c in checks]
