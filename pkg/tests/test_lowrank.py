import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrmogp.errors import DimensionError
from lrmogp.kernels import spd_operator
from lrmogp.lowrank import (
    LowRankMatrix,
    TruncationPolicy,
    compress_dense,
    fro_norm,
    lr_sum,
    stein_apply,
    trace_prod,
    truncate,
    truncation_tail,
)
from lrmogp.operators import IdentityOperator

from conftest import random_spd


def rand_lr(rng, m, n, k):
    return LowRankMatrix(rng.standard_normal((m, k)), rng.standard_normal((n, k)))


def test_zero_rank_is_zero():
    Z = LowRankMatrix.zeros(4, 3)
    assert Z.rank == 0 and Z.shape == (4, 3)
    np.testing.assert_array_equal(Z.dense(), np.zeros((4, 3)))
    assert truncate(Z, TruncationPolicy()).rank == 0
    assert fro_norm(Z) == 0.0


def test_factor_shape_mismatch():
    with pytest.raises(DimensionError):
        LowRankMatrix(np.ones((3, 2)), np.ones((4, 3)))


def test_truncate_duplicate_columns(rng):
    u, v = rng.standard_normal(6), rng.standard_normal(5)
    X = LowRankMatrix(np.c_[u, u], np.c_[v, v])
    T = truncate(X, TruncationPolicy(1e-12))
    assert T.rank == 1
    np.testing.assert_allclose(T.dense(), 2 * np.outer(u, v), atol=1e-13)


def test_truncate_tol_zero_is_exact(rng):
    X = rand_lr(rng, 20, 15, 6)
    T = truncate(X, TruncationPolicy(0.0))
    assert np.linalg.norm(T.dense() - X.dense()) <= 1e-12 * np.linalg.norm(X.dense())
    # V factor is orthonormal after truncation
    np.testing.assert_allclose(T.V.T @ T.V, np.eye(T.rank), atol=1e-13)


def test_truncate_to_rank_four(rng):
    U, _ = np.linalg.qr(rng.standard_normal((30, 8)))
    V, _ = np.linalg.qr(rng.standard_normal((25, 8)))
    s = np.geomspace(1.0, 1e-6, 8)
    X = LowRankMatrix(U * s, V)
    tol = np.sqrt(s[3] * s[4])  # between sigma_5 and sigma_4, relative to sigma_1 = 1
    T = truncate(X, TruncationPolicy(tol))
    assert T.rank == 4
    err = np.linalg.norm(X.dense() - T.dense())
    assert abs(err - np.linalg.norm(s[4:])) <= 1e-12
    assert truncation_tail(X, TruncationPolicy(tol)) == pytest.approx(np.linalg.norm(s[4:]), abs=1e-14)


def test_truncate_max_rank(rng):
    X = rand_lr(rng, 10, 9, 5)
    assert truncate(X, TruncationPolicy(0.0, max_rank=2)).rank == 2
    with pytest.raises(ValueError):
        TruncationPolicy(-1.0)
    with pytest.raises(ValueError):
        TruncationPolicy(0.1, max_rank=0)


def test_lr_sum_examples(rng):
    X = rand_lr(rng, 12, 9, 3)
    assert lr_sum(X, X, -1.0, TruncationPolicy(1e-10)).rank == 0
    Y = lr_sum(X, LowRankMatrix.zeros(12, 9), 1.0, TruncationPolicy(1e-12))
    np.testing.assert_allclose(Y.dense(), X.dense(), atol=1e-12)
    A, B = rand_lr(rng, 12, 9, 3), rand_lr(rng, 12, 9, 2)
    S = lr_sum(A, B, 0.7, TruncationPolicy(1e-14))
    assert np.linalg.norm(S.dense() - (A.dense() + 0.7 * B.dense())) <= 1e-10
    with pytest.raises(DimensionError):
        lr_sum(A, rand_lr(rng, 11, 9, 1))


def test_trace_prod_examples(rng):
    u = rng.standard_normal(7)
    v = rng.standard_normal(5)
    X = LowRankMatrix(u / np.linalg.norm(u), v / np.linalg.norm(v))
    assert trace_prod(X, X) == pytest.approx(1.0, abs=1e-15)
    Q, _ = np.linalg.qr(rng.standard_normal((7, 4)))
    X1 = LowRankMatrix(Q[:, :2], rng.standard_normal((5, 2)))
    X2 = LowRankMatrix(Q[:, 2:], rng.standard_normal((5, 2)))
    assert abs(trace_prod(X1, X2)) <= 1e-15
    A, B = rand_lr(rng, 8, 6, 3), rand_lr(rng, 8, 6, 3)
    ref = A.dense().ravel() @ B.dense().ravel()
    assert trace_prod(A, B) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(DimensionError):
        trace_prod(A, rand_lr(rng, 8, 5, 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_trace_prod_symmetric_bilinear(seed, k1, k2):
    rng = np.random.default_rng(seed)
    A, B = rand_lr(rng, 9, 7, k1), rand_lr(rng, 9, 7, k2)
    assert trace_prod(A, B) == pytest.approx(trace_prod(B, A), rel=1e-12, abs=1e-12)
    assert trace_prod(A, A) == pytest.approx(np.linalg.norm(A.dense()) ** 2, rel=1e-12)
    assert fro_norm(A) == pytest.approx(np.linalg.norm(A.dense()), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-12, 1e-2))
def test_truncation_error_bounds(seed, tol):
    rng = np.random.default_rng(seed)
    X = LowRankMatrix(rng.standard_normal((15, 6)) * np.geomspace(1, 1e-8, 6), rng.standard_normal((12, 6)))
    p = TruncationPolicy(tol)
    T = truncate(X, p)
    err = np.linalg.norm(X.dense() - T.dense())
    Xn = np.linalg.norm(X.dense())
    assert err <= tol * Xn * np.sqrt(X.rank) + 1e-13 * Xn
    assert abs(err - truncation_tail(X, p)) <= 1e-12 * Xn


def test_stein_apply_identity(rng):
    X = rand_lr(rng, 6, 4, 2)
    Y = stein_apply(IdentityOperator(6), IdentityOperator(4), 0.3, X)
    np.testing.assert_allclose(Y.dense(), 1.3 * X.dense(), rtol=1e-14)


def test_stein_apply_input_side_only(rng):
    KI = random_spd(5, seed=2)
    X = rand_lr(rng, 6, 5, 2)
    Y = stein_apply(IdentityOperator(6), spd_operator(KI), 0.0, X)
    np.testing.assert_allclose(Y.dense(), X.dense() @ KI, atol=1e-13)


def test_stein_apply_kronecker(rng):
    m, n = 7, 5
    KO, KI = random_spd(m, 1), random_spd(n, 2)
    X = rand_lr(rng, m, n, 2)
    Y = stein_apply(spd_operator(KO), spd_operator(KI), 0.4, X, TruncationPolicy(1e-14))
    K = np.kron(KI, KO) + 0.4 * np.eye(m * n)
    ref = (K @ X.dense().ravel(order="F")).reshape((m, n), order="F")
    assert np.linalg.norm(Y.dense() - ref) <= 1e-10 * np.linalg.norm(ref)
    with pytest.raises(DimensionError):
        stein_apply(spd_operator(KI), spd_operator(KO), 0.4, X)


def test_stein_apply_linear(rng):
    KO, KI = spd_operator(random_spd(6, 3)), spd_operator(random_spd(5, 4))
    A, B = rand_lr(rng, 6, 5, 2), rand_lr(rng, 6, 5, 1)
    lhs = stein_apply(KO, KI, 0.1, lr_sum(A, B, -2.5))
    rhs = lr_sum(stein_apply(KO, KI, 0.1, A), stein_apply(KO, KI, 0.1, B), -2.5)
    np.testing.assert_allclose(lhs.dense(), rhs.dense(), atol=1e-12)


def test_compress_dense(rng):
    u, v = rng.standard_normal(8), rng.standard_normal(6)
    X, tail = compress_dense(np.outer(u, v), TruncationPolicy(1e-10))
    assert X.rank == 1 and tail <= 1e-14 * np.linalg.norm(u) * np.linalg.norm(v)
    Y = rng.standard_normal((8, 6))
    X, tail = compress_dense(Y, TruncationPolicy(0.0))
    assert X.rank == 6 and np.allclose(X.dense(), Y, atol=1e-13)
    with pytest.raises(ValueError):
        compress_dense(np.array([[np.nan]]), TruncationPolicy())
