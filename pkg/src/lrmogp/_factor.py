"""Sparse factorizations used by the graph operators."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotPositiveDefiniteError


class SparseSPDFactor:
    """Symmetric sparse factorization with a positive-definiteness check.

    SuperLU is run in symmetric mode with diagonal pivoting only, so for an
    SPD matrix the row and column permutations coincide and the pivots are
    the (positive) LDL^T diagonal. Anything else is reported as not SPD.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        self.shape = A.shape
        try:
            lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefiniteError(f"sparse factorization failed: {exc}") from exc
        pivots = lu.U.diagonal()
        if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(pivots <= 0.0):
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (min pivot {pivots.min():.3e})"
            )
        self._lu = lu

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


class SparseLUFactor:
    """General sparse LU; thin wrapper so callers see a uniform interface."""

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        self.shape = A.shape
        self._lu = spla.splu(A)

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))
