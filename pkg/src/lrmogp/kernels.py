"""Squared-exponential input kernel and a dense SPD operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, NotPositiveDefiniteError
from .operators import CovarianceOperator

__all__ = ["SEKernelParams", "se_kernel", "gram", "DenseSPDOperator", "spd_operator"]


@dataclass(frozen=True)
class SEKernelParams:
    lengthscale: float = 10.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")


def _as_points(A):
    """Points as columns of a ``(c, n)`` array; 1-D input means ``c = 1``."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        return A.reshape(1, 1)
    if A.ndim == 1:
        return A[None, :]
    return A


def se_kernel(x, x_prime, p: SEKernelParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise DimensionError(f"point dimensions differ: {x.shape} vs {x_prime.shape}")
    d2 = np.sum((x - x_prime) ** 2)
    return float(p.variance * np.exp(-0.5 * d2 / p.lengthscale**2))


def gram(A, B, p: SEKernelParams) -> np.ndarray:
    """Kernel matrix between the columns of ``A`` (c, n) and ``B`` (c, m).

    One-dimensional inputs are read as ``n`` scalar points.
    """
    A, B = _as_points(A), _as_points(B)
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"point dimensions differ: {A.shape[0]} vs {B.shape[0]}")
    # |a|^2 + |b|^2 - 2ab loses accuracy for near-coincident points; the
    # explicit difference is fine at the sizes used here.
    if A.shape[0] == 1:
        d2 = (A[0][:, None] - B[0][None, :]) ** 2
    else:
        sa = np.sum(A * A, axis=0)
        sb = np.sum(B * B, axis=0)
        d2 = np.maximum(sa[:, None] + sb[None, :] - 2.0 * (A.T @ B), 0.0)
    return p.variance * np.exp(-0.5 * d2 / p.lengthscale**2)


class DenseSPDOperator(CovarianceOperator):
    """Dense symmetric matrix with a cached Cholesky factor of ``M + jitter*I``."""

    def __init__(self, matrix, jitter=0.0):
        M = np.array(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError("matrix must be square")
        scale = max(np.abs(M).max(), np.finfo(float).tiny)
        if np.abs(M - M.T).max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric")
        self.matrix = 0.5 * (M + M.T)
        self.jitter = float(jitter)
        try:
            self._factor = la.cho_factor(self.matrix + self.jitter * np.eye(M.shape[0]), lower=True)
        except la.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"Cholesky failed (jitter={jitter:g}): {exc}") from exc

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x

    def solve(self, x):
        return la.cho_solve(self._factor, x)

    def to_dense(self):
        return self.matrix.copy()


def spd_operator(M, jitter=0.0) -> DenseSPDOperator:
    return DenseSPDOperator(M, jitter)


def spd_operator_with_fallback(M) -> DenseSPDOperator:
    """Factorize ``M``; on failure retry once with ``1e-12 * trace(M)/n`` jitter."""
    try:
        return DenseSPDOperator(M)
    except NotPositiveDefiniteError:
        M = np.asarray(M, dtype=float)
        return DenseSPDOperator(M, 1e-12 * np.trace(M) / M.shape[0])
