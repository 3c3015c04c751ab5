"""Matrix-free symmetric positive definite operators."""

from __future__ import annotations

import abc

import numpy as np

__all__ = ["CovarianceOperator", "DiagonalOperator", "IdentityOperator"]


class CovarianceOperator(abc.ABC):
    """SPD operator exposing ``apply`` (``K x``) and ``solve`` (``K^{-1} x``).

    Both accept a vector of length ``dim`` or a ``(dim, k)`` block.
    """

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        raise NotImplementedError  # pragma: no cover

    @abc.abstractmethod
    def apply(self, x):
        raise NotImplementedError  # pragma: no cover

    @abc.abstractmethod
    def solve(self, x):
        raise NotImplementedError  # pragma: no cover

    def to_dense(self) -> np.ndarray:
        """Dense matrix, built column by column. Only for small operators."""
        return np.asarray(self.apply(np.eye(self.dim)))

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class DiagonalOperator(CovarianceOperator):
    def __init__(self, diagonal):
        d = np.asarray(diagonal, dtype=float).ravel()
        if np.any(d <= 0):
            raise ValueError("diagonal entries must be positive")
        self.diagonal = d

    @property
    def dim(self):
        return self.diagonal.size

    def _scale(self, x, s):
        x = np.asarray(x, dtype=float)
        return s[:, None] * x if x.ndim == 2 else s * x

    def apply(self, x):
        return self._scale(x, self.diagonal)

    def solve(self, x):
        return self._scale(x, 1.0 / self.diagonal)

    def to_dense(self):
        return np.diag(self.diagonal)


class IdentityOperator(DiagonalOperator):
    def __init__(self, dim):
        super().__init__(np.ones(dim))

    def apply(self, x):
        return np.array(x, dtype=float)

    solve = apply
