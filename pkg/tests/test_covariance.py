import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obd.covariance import (
    CovarianceAccumulator,
    CovariancePair,
    correlation_factor,
    correlation_from_sums,
)
from obd.errors import DimensionError, UndefinedCorrelationError
from obd.factorizations import cholesky, sym_eig


def test_identity_batch():
    acc = CovarianceAccumulator("l", n=2, m=2).accumulate(np.eye(2), np.eye(2))
    np.testing.assert_array_equal(acc.sum_xx, np.eye(2))
    assert acc.tokens_seen == 2


def test_additivity_is_exact(rng):
    x1, x2 = rng.standard_normal((3, 5)), rng.standard_normal((3, 7))
    g1, g2 = rng.standard_normal((4, 5)), rng.standard_normal((4, 7))
    split = CovarianceAccumulator("l", 3, 4, track_xg=True).accumulate(x1, g1).accumulate(x2, g2)
    whole = CovarianceAccumulator("l", 3, 4, track_xg=True).accumulate(np.hstack([x1, x2]), np.hstack([g1, g2]))
    for name in ("sum_xx", "sum_gg", "sum_xg"):
        np.testing.assert_allclose(getattr(split, name), getattr(whole, name), rtol=1e-14, atol=1e-13)
    assert split.tokens_seen == whole.tokens_seen == 12


def test_merge_equals_single_stream(rng):
    x, g = rng.standard_normal((3, 10)), rng.standard_normal((2, 10))
    a = CovarianceAccumulator("l", 3, 2, track_xg=True).accumulate(x[:, :4], g[:, :4])
    b = CovarianceAccumulator("l", 3, 2, track_xg=True).accumulate(x[:, 4:], g[:, 4:])
    ref = CovarianceAccumulator("l", 3, 2, track_xg=True).accumulate(x, g)
    a.merge(b)
    np.testing.assert_allclose(a.sum_xg, ref.sum_xg, atol=1e-13)
    assert a.tokens_seen == 10
    with pytest.raises(DimensionError):
        a.merge(CovarianceAccumulator("other", 2, 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.lists(st.integers(1, 8), min_size=1, max_size=4))
def test_sums_stay_symmetric_psd(seed, n, m, batches):
    rng = np.random.default_rng(seed)
    acc = CovarianceAccumulator("l", n, m)
    total = 0
    for t in batches:
        acc.accumulate(rng.standard_normal((n, t)), rng.standard_normal((m, t)))
        total += t
        for s in (acc.sum_xx, acc.sum_gg):
            assert np.max(np.abs(s - s.T)) <= 1e-8
            assert sym_eig(0.5 * (s + s.T)).lam[-1] >= -1e-10
    assert acc.tokens_seen == total


def test_dimension_mismatch():
    acc = CovarianceAccumulator("l", 3, 2)
    with pytest.raises(DimensionError, match="3 rows"):
        acc.accumulate(np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(DimensionError, match="token counts"):
        acc.accumulate(np.ones((3, 4)), np.ones((2, 5)))


def test_finalize_unit_vectors():
    x = np.zeros((3, 5))
    x[0] = 1.0
    pair = CovarianceAccumulator("l", 3, 1).accumulate(x, np.ones((1, 5))).finalize(0.0)
    e1 = np.eye(3)[:, :1]
    np.testing.assert_array_equal(pair.c_x, e1 @ e1.T)


def test_finalize_normalizes_then_dampens():
    # two tokens give sum diag(2, 6), i.e. normalized diag(1, 3)
    x = np.diag([np.sqrt(2.0), np.sqrt(6.0)])
    pair = CovarianceAccumulator("l", 2, 2).accumulate(x, x).finalize(0.1)
    np.testing.assert_allclose(pair.c_x, np.diag([1.2, 3.2]), atol=1e-15)
    assert pair.tokens == 2 and pair.dampening == 0.1


def test_finalize_factorizable(rng):
    acc = CovarianceAccumulator("l", 6, 4).accumulate(rng.standard_normal((6, 3)), rng.standard_normal((4, 3)))
    pair = acc.finalize(0.1)  # rank-3 sums: only dampening makes them SPD
    cholesky(pair.c_x)
    cholesky(pair.c_g)


@pytest.mark.filterwarnings("ignore:covariance has zero mean diagonal")
def test_finalize_empty_warns():
    with pytest.warns(RuntimeWarning, match="no tokens"):
        pair = CovarianceAccumulator("l", 2, 2).finalize(0.1)
    cholesky(pair.c_x)


def test_pair_helpers(rng):
    ident = CovariancePair.identity(3, 2)
    assert (ident.m, ident.n) == (3, 2)
    np.testing.assert_array_equal(ident.l_g.l, np.eye(3))
    pair = CovariancePair.from_matrices(np.diag([1.0, 3.0]), np.eye(2), dampening=0.1)
    np.testing.assert_allclose(pair.c_x, np.diag([1.2, 3.2]))


# -- correlation factor ------------------------------------------------------


def test_rho_self_is_one(rng):
    x = rng.standard_normal((4, 9))
    assert correlation_factor(x, x) == pytest.approx(1.0, abs=1e-10)


def test_rho_orthogonal_is_zero():
    x = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    g = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 2.0], [0.0, 0.0, 3.0, 1.0]])
    assert correlation_factor(x, g) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 12))
def test_rho_in_unit_interval_and_streams(seed, n, m, t):
    rng = np.random.default_rng(seed)
    x, g = rng.standard_normal((n, t)), rng.standard_normal((m, t))
    rho = correlation_factor(x, g)
    assert 0.0 <= rho <= 1.0
    acc = CovarianceAccumulator("l", n, m, track_xg=True)
    for cols in np.array_split(np.arange(t), 3):
        acc.accumulate(x[:, cols], g[:, cols])
    direct = np.linalg.norm(x @ g.T) ** 2 / (np.linalg.norm(x @ x.T) * np.linalg.norm(g @ g.T))
    assert acc.correlation_factor() == pytest.approx(direct, abs=1e-12)


def test_rho_zero_trace_undefined():
    with pytest.raises(UndefinedCorrelationError):
        correlation_factor(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(UndefinedCorrelationError):
        CovarianceAccumulator("l", 2, 2, track_xg=True).correlation_factor()
    with pytest.raises(ValueError):
        CovarianceAccumulator("l", 2, 2).accumulate(np.ones((2, 1)), np.ones((2, 1))).correlation_factor()


def test_rho_from_sums_guard():
    with pytest.raises(ArithmeticError):
        correlation_from_sums(np.eye(2), np.eye(2), 2 * np.eye(2))
