from contextlib import contextmanager

import numpy as np
import pytest

from obd.covariance import CovariancePair
from obd.toymodel import loss_and_backward
from obd.verify import random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_pair(rng, m, n, dampening=0.1):
    return CovariancePair(random_spd(rng, n, dampening), random_spd(rng, m, dampening))


def finite_difference(model, seq, temperature, name, eps=1e-5):
    base = getattr(model, name)
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sgn in (1, -1):
            w = base.copy()
            w[idx] += sgn * eps
            vals.append(loss_and_backward(model.with_weights(**{name: w}), seq, temperature).loss)
        out[idx] = (vals[0] - vals[1]) / (2 * eps)
    return out


def gradient_mismatch(model, seq, temperature):
    """Worst relative error (1e-6 floor) over every parameter."""
    res = loss_and_backward(model, seq, temperature)
    worst = 0.0
    for name, grad in res.grads.items():
        fd = finite_difference(model, seq, temperature, name)
        worst = max(worst, float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6))))
    return worst


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = (passed, detail)


@contextmanager
def criterion(name: str):
    """Record the outcome of one acceptance criterion for the summary."""
    state = {"detail": ""}
    try:
        yield state
    except BaseException as exc:
        record(name, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    record(name, True, state["detail"])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {name}  {detail}")
