"""Output covariance operators built from graph filters.

Two filters define ``K_O = B B^T``:

* global filter, ``B = (I + a L)^{-1}`` so ``K_O = (I + a L)^{-2}``;
* local averaging, ``B = (I + a D)^{-1} (I + a W)`` so
  ``K_O = (I + a D)^{-1} (I + a W)^2 (I + a D)^{-1}``.

Submatrix variants restrict either filter to a node selection without ever
forming a dense inverse. The degree-weighted average (DWA) model uses the
diagonal degree block of the training nodes as ``K_O`` and maps the Stein
solution to target nodes through ``M^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._factor import SparseLUFactor, SparseSPDFactor
from .errors import (
    DegeneratePartitionError,
    SelectionError,
    UnsupportedCaseError,
)
from .graph_core import Graph, NodePartition, degree_vector, laplacian
from .operators import CovarianceOperator, DiagonalOperator

__all__ = [
    "GlobalFilterParams",
    "LocalAverageParams",
    "Selection",
    "GlobalFilterOperator",
    "LocalAverageOperator",
    "SubmatrixGlobalOperator",
    "SubmatrixLocalOperator",
    "DwaModel",
    "global_filter_operator",
    "local_average_operator",
    "submatrix_global_operator",
    "submatrix_local_operator",
    "dwa_model",
    "dwa_output_operators",
    "dwa_covariance_dense",
    "gershgorin_psd_check",
]


@dataclass(frozen=True)
class GlobalFilterParams:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LocalAverageParams:
    alpha: float = 0.1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class Selection:
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def principal(cls, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return cls(idx, idx)

    def validate(self, n):
        for name, idx in (("rows", self.rows), ("cols", self.cols)):
            idx = np.asarray(idx)
            if idx.ndim != 1 or idx.size == 0:
                raise SelectionError(f"{name} must be a non-empty index list")
            if idx.min() < 0 or idx.max() >= n:
                raise SelectionError(f"{name} index out of range for n={n}")
            if np.unique(idx).size != idx.size:
                raise SelectionError(f"duplicate {name} indices")


def _shift(g: Graph, alpha):
    """Sparse ``I + alpha L``."""
    return sp.csc_matrix(sp.identity(g.node_count) + alpha * laplacian(g))


class GlobalFilterOperator(CovarianceOperator):
    """``K_O = (I + a L)^{-2}``: apply is two factor solves, solve two products."""

    def __init__(self, g: Graph, p: GlobalFilterParams):
        self.params = p
        self._S = _shift(g, p.alpha)
        self._factor = SparseSPDFactor(self._S)

    @property
    def dim(self):
        return self._S.shape[0]

    def apply(self, x):
        return self._factor.solve(self._factor.solve(x))

    def solve(self, x):
        return self._S @ (self._S @ x)


class LocalAverageOperator(CovarianceOperator):
    """Explicit sparse local-average ``K_O`` with a cached factorization.

    Raises ``NotPositiveDefiniteError`` when ``alpha`` is too large for the
    graph, rather than silently regularizing.
    """

    def __init__(self, g: Graph, p: LocalAverageParams):
        self.params = p
        self.matrix = local_average_matrix(g, p.alpha)
        self._factor = SparseSPDFactor(self.matrix)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x

    def solve(self, x):
        return self._factor.solve(x)


def _local_factor(g: Graph, alpha):
    """``F = (I + a W)(I + a D)^{-1}``, so that ``K_O = F^T F``."""
    d = degree_vector(g)
    IW = sp.identity(g.node_count) + alpha * g.adjacency
    return sp.csr_matrix(IW @ sp.diags(1.0 / (1.0 + alpha * d)))


def local_average_matrix(g: Graph, alpha) -> sp.csc_matrix:
    F = _local_factor(g, alpha)
    K = F.T @ F
    return sp.csc_matrix(0.5 * (K + K.T))


class SubmatrixGlobalOperator(CovarianceOperator):
    """``K_O = R (I + a L)^{-2} C`` for a principal selection.

    ``solve`` goes through the block system ``[[0, -R], [C, X]]`` with
    ``X = (I + a L)^2``, whose Schur complement is ``R X^{-1} C``.
    """

    def __init__(self, g: Graph, p: GlobalFilterParams, s: Selection):
        n = g.node_count
        s.validate(n)
        rows, cols = np.asarray(s.rows), np.asarray(s.cols)
        if not np.array_equal(rows, cols):
            raise SelectionError("rows and cols must agree for a covariance operator")
        self.params = p
        self.selection = s
        self._n = n
        S = _shift(g, p.alpha)
        self._factor = SparseSPDFactor(S)
        k = rows.size
        R = sp.csr_matrix((np.ones(k), (np.arange(k), rows)), shape=(k, n))
        C = R.T
        X = S @ S
        block = sp.bmat([[None, -R], [C, X]], format="csc")
        try:
            self._block = SparseLUFactor(block)
        except RuntimeError as exc:
            raise SelectionError(f"selection system is singular: {exc}") from exc
        self._k = k

    @property
    def dim(self):
        return self._k

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        full = np.zeros((self._n,) + x.shape[1:])
        full[self.selection.cols] = x
        z = self._factor.solve(self._factor.solve(full))
        return z[self.selection.rows]

    def solve(self, x):
        x = np.asarray(x, dtype=float)
        rhs = np.zeros((self._k + self._n,) + x.shape[1:])
        rhs[: self._k] = x
        return self._block.solve(rhs)[: self._k]


class SubmatrixLocalOperator(CovarianceOperator):
    """``K_O = R F^T F C`` assembled sparsely and factorized once."""

    def __init__(self, g: Graph, p: LocalAverageParams, s: Selection):
        s.validate(g.node_count)
        rows, cols = np.asarray(s.rows), np.asarray(s.cols)
        if not np.array_equal(rows, cols):
            raise SelectionError("rows and cols must agree for a covariance operator")
        self.params = p
        self.selection = s
        F = sp.csc_matrix(_local_factor(g, p.alpha))
        Fc = F[:, cols]
        K = Fc.T @ Fc
        self.matrix = sp.csc_matrix(0.5 * (K + K.T))
        self._factor = SparseSPDFactor(self.matrix)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x

    def solve(self, x):
        return self._factor.solve(x)


def global_filter_operator(g: Graph, p: GlobalFilterParams) -> GlobalFilterOperator:
    return GlobalFilterOperator(g, p)


def local_average_operator(g: Graph, p: LocalAverageParams) -> LocalAverageOperator:
    return LocalAverageOperator(g, p)


def submatrix_global_operator(g, p, s) -> SubmatrixGlobalOperator:
    return SubmatrixGlobalOperator(g, p, s)


def submatrix_local_operator(g, p, s) -> SubmatrixLocalOperator:
    return SubmatrixLocalOperator(g, p, s)


# Degree-weighted average ======================================================


@dataclass(frozen=True, eq=False)
class DwaModel:
    """Partitioned graph blocks for the degree-weighted average covariance.

    Index 1 refers to training nodes, index 2 to target nodes. Both degree
    vectors are row sums of the *full* weight matrix.
    """

    train_nodes: np.ndarray
    target_nodes: np.ndarray
    W11: sp.csr_matrix
    W12: sp.csr_matrix
    W21: sp.csr_matrix
    W22: sp.csr_matrix
    D1: np.ndarray
    D2: np.ndarray
    _factor: SparseLUFactor = field(repr=False)

    @property
    def simple(self) -> bool:
        """True when no two target nodes are adjacent (``W22 = 0``)."""
        return self.W22.nnz == 0

    def cross_apply(self, x):
        """``M^T x`` with ``M = W12 (I - D2^{-1} W22)^{-1}``.

        ``M^T = (I - W22 D2^{-1})^{-1} W21``, so this is one sparse product
        followed by a solve with the cached factor.
        """
        x = np.asarray(x, dtype=float)
        y = self.W21 @ x
        if self.simple:
            return np.asarray(y)
        return self._factor.solve(np.asarray(y))

    def posterior_weights(self):
        """Dense ``M^T D1^{-1}``: weight of training node j in target i."""
        return self.cross_apply(np.diag(1.0 / self.D1))


def dwa_model(g: Graph, part: NodePartition) -> DwaModel:
    """Split the weight matrix by ``part`` (inputs = training, outputs = targets)."""
    train = np.asarray(part.input_nodes, dtype=np.int64)
    target = np.asarray(part.output_nodes, dtype=np.int64)
    if np.intersect1d(train, target).size:
        raise DegeneratePartitionError("training and target nodes overlap")
    W = sp.csr_matrix(g.adjacency)
    d = degree_vector(g)
    D1, D2 = d[train], d[target]
    if np.any(D1 <= 0):
        raise DegeneratePartitionError("a training node has zero degree")
    if np.any(D2 <= 0):
        bad = target[D2 <= 0]
        raise DegeneratePartitionError(f"target nodes without neighbours: {bad[:10].tolist()}")
    W11 = W[train][:, train]
    W12 = W[train][:, target]
    W21 = sp.csr_matrix(W12.T)
    W22 = W[target][:, target]
    A = sp.identity(target.size) - W22 @ sp.diags(1.0 / D2)
    try:
        factor = SparseLUFactor(A)
    except RuntimeError as exc:
        raise DegeneratePartitionError(
            f"I - W22 D2^-1 is singular; some target component has no training neighbour ({exc})"
        ) from exc
    return DwaModel(train, target, W11, W12, W21, W22, D1, D2, factor)


def dwa_output_operators(m: DwaModel):
    """Return ``(K_O, cross_apply)``: the diagonal ``D1`` and ``x -> M^T x``."""
    return DiagonalOperator(m.D1), m.cross_apply


def dwa_covariance_dense(m: DwaModel) -> np.ndarray:
    """Dense joint covariance ``[[D1, W12], [W21, D2]]`` of the simple case."""
    if not m.simple:
        raise UnsupportedCaseError("the closed-form joint covariance needs W22 = 0")
    return np.block([
        [np.diag(m.D1), m.W12.toarray()],
        [m.W21.toarray(), np.diag(m.D2)],
    ])


def gershgorin_psd_check(m: DwaModel):
    """Gershgorin certificate for the simple-case joint covariance.

    Every row ``i`` has centre ``deg(v_i)`` and radius equal to its edge mass
    into the other side, which never exceeds the degree. Returns
    ``(certified, min(centre - radius))``.
    """
    if not m.simple:
        raise UnsupportedCaseError("Gershgorin certification only covers W22 = 0")
    r1 = np.asarray(m.W12.sum(axis=1)).ravel()
    r2 = np.asarray(m.W21.sum(axis=1)).ravel()
    margin = min((m.D1 - r1).min(initial=np.inf), (m.D2 - r2).min(initial=np.inf))
    # a disc centred at c with radius r <= c only certifies lambda >= c - r >= 0
    return bool(margin >= -1e-12 * max(m.D1.max(), m.D2.max())), float(margin)

