"""Factored low-rank matrices ``X = U V^T`` and the algebra LR-PCG needs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionError

__all__ = [
    "LowRankMatrix",
    "TruncationPolicy",
    "truncate",
    "truncation_tail",
    "lr_sum",
    "trace_prod",
    "fro_norm",
    "stein_apply",
    "compress_dense",
]


@dataclass(frozen=True, eq=False)
class LowRankMatrix:
    """``U @ V.T`` with ``U`` of shape (m, k) and ``V`` of shape (n, k).

    ``k = 0`` is the zero matrix.
    """

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if V.ndim == 1:
            V = V[:, None]
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise DimensionError(f"factor shapes {U.shape} and {V.shape} are incompatible")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros((n, 0)))

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self):
        return self.U.shape[1]

    def dense(self):
        return self.U @ self.V.T

    def scaled(self, s):
        return LowRankMatrix(s * self.U, self.V)

    def __repr__(self):
        m, n = self.shape
        return f"LowRankMatrix(shape=({m}, {n}), rank={self.rank})"


@dataclass(frozen=True)
class TruncationPolicy:
    """Drop singular values below ``tol * sigma_1`` and beyond ``max_rank``."""

    tol: float = 1e-10
    max_rank: int | None = None

    def __post_init__(self):
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be positive")


def _svd(A):
    try:
        return la.svd(A, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        return la.svd(A, full_matrices=False, lapack_driver="gesvd")


def _core_svd(X: LowRankMatrix):
    """Economy QR of both factors and SVD of the small core."""
    Qu, Ru = la.qr(X.U, mode="economic")
    Qv, Rv = la.qr(X.V, mode="economic")
    P, s, Wt = _svd(Ru @ Rv.T)
    # singular values below the rounding level of the core product are noise,
    # e.g. the whole spectrum of X + (-1) X
    floor = 4 * max(Ru.shape + Rv.shape) * np.finfo(float).eps * la.norm(Ru) * la.norm(Rv)
    s = np.where(s > floor, s, 0.0)
    return Qu, Qv, P, s, Wt


def _keep(s, policy):
    if s.size == 0 or s[0] == 0.0:
        return 0
    k = int(np.sum((s >= policy.tol * s[0]) & (s > 0.0)))
    if policy.max_rank is not None:
        k = min(k, policy.max_rank)
    return k


def truncation_tail(X: LowRankMatrix, policy: TruncationPolicy) -> float:
    """Frobenius norm of the singular values that ``truncate`` would discard."""
    if X.rank == 0:
        return 0.0
    s = _core_svd(X)[3]
    return float(np.linalg.norm(s[_keep(s, policy):]))


def truncate(X: LowRankMatrix, policy: TruncationPolicy | None) -> LowRankMatrix:
    """Re-compress ``X`` with orthonormal ``V`` and singular values folded into ``U``.

    ``policy=None`` returns ``X`` unchanged.
    """
    if policy is None:
        return X
    m, n = X.shape
    if X.rank == 0:
        return LowRankMatrix.zeros(m, n)
    Qu, Qv, P, s, Wt = _core_svd(X)
    k = _keep(s, policy)
    return LowRankMatrix((Qu @ P[:, :k]) * s[:k], Qv @ Wt[:k].T)


def lr_sum(X1: LowRankMatrix, X2: LowRankMatrix, scale2=1.0, policy=None) -> LowRankMatrix:
    """Truncated ``X1 + scale2 * X2`` from the concatenated factors."""
    if X1.shape != X2.shape:
        raise DimensionError(f"cannot add {X1.shape} and {X2.shape}")
    S = LowRankMatrix(np.hstack([X1.U, scale2 * X2.U]), np.hstack([X1.V, X2.V]))
    return truncate(S, policy)


def trace_prod(X1: LowRankMatrix, X2: LowRankMatrix) -> float:
    """Frobenius inner product ``trace((U1^T U2)(V2^T V1))``."""
    if X1.shape != X2.shape:
        raise DimensionError(f"cannot pair {X1.shape} with {X2.shape}")
    return float(np.trace((X1.U.T @ X2.U) @ (X2.V.T @ X1.V)))


def fro_norm(X: LowRankMatrix) -> float:
    """Frobenius norm via the QR cores.

    Unlike ``sqrt(trace_prod(X, X))`` this does not cancel catastrophically
    when ``X`` is a small difference of large terms.
    """
    if X.rank == 0:
        return 0.0
    Ru = la.qr(X.U, mode="r")[0][: X.rank]
    Rv = la.qr(X.V, mode="r")[0][: X.rank]
    return float(np.linalg.norm(Ru @ Rv.T))


def stein_apply(KO, KI, sigma2, X: LowRankMatrix, policy=None) -> LowRankMatrix:
    """``K_O X K_I + sigma2 X`` in factored form.

    This is the vec-action of ``K_I kron K_O + sigma2 I``. The rank doubles
    before ``policy`` truncation.
    """
    m, n = X.shape
    if KO.dim != m or KI.dim != n:
        raise DimensionError(f"operators ({KO.dim}, {KI.dim}) do not match X {X.shape}")
    if X.rank == 0:
        return LowRankMatrix.zeros(m, n)
    s = np.sqrt(sigma2)
    U = np.hstack([s * X.U, KO.apply(X.U)])
    V = np.hstack([s * X.V, KI.apply(X.V)])
    return truncate(LowRankMatrix(U, V), policy)


def compress_dense(Y, policy: TruncationPolicy):
    """Truncated SVD factorization of a dense matrix.

    Returns ``(LowRankMatrix, tail)`` where ``tail`` is the Frobenius error.
    """
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("matrix contains non-finite entries")
    P, s, Wt = _svd(Y)
    k = _keep(s, policy)
    return LowRankMatrix(P[:, :k] * s[:k], Wt[:k].T), float(np.linalg.norm(s[k:]))
