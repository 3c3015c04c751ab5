"""Solvers for the Stein equation ``K_O X K_I + sigma2 X = C``.

The equation is the matricized form of ``(K_I kron K_O + sigma2 I) vec(X) =
vec(C)``. Dense references (Kronecker assembly, eigendecomposition, Smith
iterations) are meant for small problems; ``kpik_solve`` and
``lrpcg_solve`` work on low-rank factors and only touch the operators
through ``apply``/``solve`` on blocks of vectors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import (
    BreakdownError,
    ConvergenceError,
    DimensionError,
    NonContractiveError,
    NotPositiveDefiniteError,
    SizeGuardError,
)
from .lowrank import (
    LowRankMatrix,
    TruncationPolicy,
    fro_norm,
    lr_sum,
    stein_apply,
    trace_prod,
    truncate,
)
from .operators import CovarianceOperator

__all__ = [
    "SteinProblem",
    "SolverConfig",
    "SolverReport",
    "dense_kron_solve",
    "eig_stein_solve",
    "smith_solve",
    "kpik_project",
    "kpik_solve",
    "lrpcg_solve",
    "rel_residual",
    "solve",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 4000


@dataclass(frozen=True, eq=False)
class SteinProblem:
    KO: CovarianceOperator
    KI: CovarianceOperator
    sigma2: float
    rhs: LowRankMatrix

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.rhs.shape != (self.KO.dim, self.KI.dim):
            raise DimensionError(
                f"rhs shape {self.rhs.shape} does not match operators ({self.KO.dim}, {self.KI.dim})"
            )

    @property
    def shape(self):
        return self.rhs.shape


@dataclass(frozen=True)
class SolverConfig:
    rel_residual_tol: float = 1e-8
    max_iter: int = 50
    trunc: TruncationPolicy = field(default_factory=lambda: TruncationPolicy(1e-10))
    precond_kpik_steps: int = 2
    # Galerkin condition imposed on the Sylvester form (K_O X + sigma2 X K_I^{-1}
    # = C K_I^{-1}) or directly on the Stein form.
    projection: str = "stein"
    deflation_tol: float = 1e-12
    # CG direction update: "polak_ribiere" tolerates the residual-dependent
    # KPIK preconditioner, "fletcher_reeves" is the classical PCG ratio.
    beta: str = "polak_ribiere"

    def __post_init__(self):
        if not self.rel_residual_tol > 0:
            raise ValueError("rel_residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.precond_kpik_steps < 0:
            raise ValueError("precond_kpik_steps must be nonnegative")
        if self.projection not in ("sylvester", "stein"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.beta not in ("polak_ribiere", "fletcher_reeves"):
            raise ValueError(f"unknown beta rule {self.beta!r}")


@dataclass
class SolverReport:
    solver_name: str
    iterations: int
    solution_rank: int
    runtime_seconds: float
    rel_residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    message: str = ""
    extras: dict = field(default_factory=dict)


# Residuals ===================================================================


def _residual(p: SteinProblem, X: LowRankMatrix) -> LowRankMatrix:
    return lr_sum(p.rhs, stein_apply(p.KO, p.KI, p.sigma2, X), -1.0)


def rel_residual(p: SteinProblem, X: LowRankMatrix) -> float:
    """``||C - (K_O X K_I + sigma2 X)||_F / ||C||_F``, without truncation.

    Falls back to the absolute residual when ``C = 0``.
    """
    if X.shape != p.shape:
        raise DimensionError(f"solution shape {X.shape} does not match problem {p.shape}")
    r = fro_norm(_residual(p, X))
    c = fro_norm(p.rhs)
    return r / c if c > 0 else r


# Dense references ============================================================


def _dense_ops(p: SteinProblem):
    return p.KO.to_dense(), p.KI.to_dense()


def dense_kron_solve(p: SteinProblem) -> np.ndarray:
    """Assemble ``K_I kron K_O + sigma2 I`` and solve densely."""
    m, n = p.shape
    if m * n > DENSE_LIMIT:
        raise SizeGuardError(f"dense Kronecker solve limited to n*m <= {DENSE_LIMIT}, got {m * n}")
    KO, KI = _dense_ops(p)
    K = np.kron(KI, KO) + p.sigma2 * np.eye(m * n)
    c = p.rhs.dense().reshape(-1, order="F")
    x = la.solve(K, c, assume_a="pos")
    return x.reshape((m, n), order="F")


def eig_stein_solve(p: SteinProblem) -> np.ndarray:
    """Solve through the eigendecompositions of ``K_I`` and ``K_O``.

    With ``K_I = U_I diag(l_I) U_I^T`` and ``K_O = U_O diag(l_O) U_O^T`` the
    transformed unknown decouples entrywise:
    ``Q_ij = (U_O^T C U_I)_ij / (l_I[j] + sigma2 / l_O[i])`` and
    ``X = U_O diag(1/l_O) Q U_I^T``.
    """
    KO, KI = _dense_ops(p)
    lam_o, U_o = la.eigh(0.5 * (KO + KO.T))
    lam_i, U_i = la.eigh(0.5 * (KI + KI.T))
    if lam_o.min() <= 0:
        raise NotPositiveDefiniteError(
            f"K_O must be invertible and positive definite (min eigenvalue {lam_o.min():.3e})"
        )
    Ct = (U_o.T @ p.rhs.U) @ (p.rhs.V.T @ U_i)
    H = lam_i[None, :] + p.sigma2 / lam_o[:, None]
    Q = Ct / H
    return U_o @ ((Q / lam_o[:, None]) @ U_i.T)


def _spectral_radius(A):
    return float(np.abs(la.eigvals(A)).max()) if A.size else 0.0


def smith_solve(A, B, C, squared=True, tol=1e-13, max_iter=1000) -> np.ndarray:
    """Fixed point of ``X = A X B + C`` by (squared) Smith iteration.

    The plain variant iterates ``X <- A X B + C``; the squared variant
    ``X <- A_k X B_k + X`` with ``A_{k+1} = A_k^2`` and ``B_{k+1} = B_k^2``
    doubles the number of series terms per step. Requires
    ``rho(A) * rho(B) < 1``.
    """
    A, B, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C))
    if A.shape[0] != A.shape[1] or B.shape[0] != B.shape[1]:
        raise DimensionError("A and B must be square")
    if C.shape != (A.shape[0], B.shape[0]):
        raise DimensionError(f"C has shape {C.shape}, expected {(A.shape[0], B.shape[0])}")
    rho = _spectral_radius(A) * _spectral_radius(B)
    if rho >= 1.0:
        raise NonContractiveError(f"rho(A) * rho(B) = {rho:.6g} >= 1")
    X = C.copy()
    Ak, Bk = A, B
    for _ in range(max_iter):
        if squared:
            X_new = Ak @ X @ Bk + X
            Ak, Bk = Ak @ Ak, Bk @ Bk
        else:
            X_new = A @ X @ B + C
        step = la.norm(X_new - X)
        X = X_new
        if step <= tol * la.norm(X):
            return X
    raise ConvergenceError(f"Smith iteration did not converge in {max_iter} steps", X)


# Extended Krylov projection ===================================================


def _orthonormal_extension(Q, W, drop_tol):
    """Orthonormal basis of the part of ``range(W)`` outside ``range(Q)``.

    Directions whose size after projection is below ``drop_tol`` times the
    size of ``W`` are deflated.
    """
    if W.shape[1] == 0:
        return W
    ref = la.norm(W, 2)
    if ref == 0:
        return W[:, :0]
    for _ in range(2):
        W = W - Q @ (Q.T @ W)
    P, s, _ = la.svd(W, full_matrices=False)
    P = P[:, s > drop_tol * ref]
    if P.shape[1] == 0:
        return P
    # the kept directions may be small, so one more projection restores
    # orthogonality to working precision
    P = P - Q @ (Q.T @ P)
    return la.qr(P, mode="economic")[0]


class _ExtendedBasis:
    """Orthonormal basis of ``span{S, F^{-1} S, F S, F^{-2} S, ...}``.

    ``fwd`` and ``inv`` are block maps with ``inv = fwd^{-1}``. Both images
    of every basis column are kept, they feed the projected matrices, the
    residual and the next expansion.
    """

    def __init__(self, fwd, inv, seed, drop_tol):
        self.fwd, self.inv, self.drop_tol = fwd, inv, drop_tol
        n = seed.shape[0]
        self.Q = np.zeros((n, 0))
        self.FQ = np.zeros((n, 0))
        self.IQ = np.zeros((n, 0))
        self._last_fwd = self._add(seed)
        self._last_inv = self._add(self.inv(seed))

    @property
    def dim(self):
        return self.Q.shape[1]

    def _add(self, W):
        P = _orthonormal_extension(self.Q, W, self.drop_tol)
        k = P.shape[1]
        if k:
            self.Q = np.hstack([self.Q, P])
            self.FQ = np.hstack([self.FQ, self.fwd(P)])
            self.IQ = np.hstack([self.IQ, self.inv(P)])
        return slice(self.dim - k, self.dim)

    def expand(self):
        """Add one forward and one inverse block; return the number of new columns."""
        before = self.dim
        fwd_cand = self.FQ[:, self._last_fwd]
        inv_cand = self.IQ[:, self._last_inv]
        self._last_fwd = self._add(fwd_cand)
        self._last_inv = self._add(inv_cand)
        return self.dim - before


def _sym(A):
    return 0.5 * (A + A.T)


@dataclass
class _Projection:
    left: _ExtendedBasis
    right: _ExtendedBasis
    projection: str
    Y: np.ndarray = None

    def solution(self):
        return LowRankMatrix(self.left.Q @ self.Y, self.right.Q)


def _solve_projected(p: SteinProblem, proj: _Projection, projection, G):
    """Galerkin solve on the current bases via two small symmetric eigendecompositions."""
    L, R = proj.left, proj.right
    a, Pl = la.eigh(_sym(L.Q.T @ L.FQ))  # Q_L^T K_O Q_L
    lhs = Pl.T @ (L.Q.T @ p.rhs.U)
    if projection == "sylvester":
        # K_O X + X (sigma2 K_I^{-1}) = C K_I^{-1};  R.FQ holds K_I^{-1} Q_R
        b, Pr = la.eigh(_sym(p.sigma2 * (R.Q.T @ R.FQ)))
        rhs = Pr.T @ (R.Q.T @ G)
        core = (lhs @ rhs.T) / (a[:, None] + b[None, :])
    else:
        # R.IQ holds K_I Q_R
        c, Pr = la.eigh(_sym(R.Q.T @ R.IQ))
        rhs = Pr.T @ (R.Q.T @ p.rhs.V)
        core = (lhs @ rhs.T) / (np.outer(a, c) + p.sigma2)
    proj.Y = Pl @ core @ Pr.T


def _projected_residual_norm(p: SteinProblem, proj: _Projection):
    """Exact ``||C - K_O X K_I - sigma2 X||_F`` for ``X = Q_L Y Q_R^T``."""
    L, R, Y = proj.left, proj.right, proj.Y
    C = p.rhs
    lf = np.hstack([C.U, L.FQ, L.Q])
    rf = np.hstack([C.V, R.IQ, R.Q])
    r, dl, dr = C.rank, L.dim, R.dim
    core = np.zeros((r + 2 * dl, r + 2 * dr))
    core[:r, :r] = np.eye(r)
    core[r:r + dl, r:r + dr] = -Y
    core[r + dl:, r + dr:] = -p.sigma2 * Y
    Rl = la.qr(lf, mode="r")[0][: lf.shape[1]]
    Rr = la.qr(rf, mode="r")[0][: rf.shape[1]]
    return float(la.norm(Rl @ core @ Rr.T))


def kpik_project(p: SteinProblem, steps: int, cfg: SolverConfig | None = None,
                 on_iteration=None):
    """Run ``steps`` extended Krylov iterations and return the projection state.

    The output side is ``EK(K_O, U)``; the time side is
    ``EK(sigma2 K_I^{-1}, K_I^{-1} V)``, i.e. the extended space of the
    Sylvester coefficient seeded with the transformed right factor. Every
    iteration adds a forward and an inverse block per side, then the small
    projected equation is solved. ``on_iteration(k, proj)`` may return True
    to stop early.
    """
    cfg = cfg or SolverConfig()
    C = p.rhs
    G = p.KI.solve(C.V)
    left = _ExtendedBasis(p.KO.apply, p.KO.solve, C.U, cfg.deflation_tol)
    right = _ExtendedBasis(p.KI.solve, p.KI.apply, G, cfg.deflation_tol)
    proj = _Projection(left, right, cfg.projection)
    k = 0
    for k in range(1, steps + 1):
        grew = True
        if k > 1:
            grew = (left.expand() + right.expand()) > 0
        _solve_projected(p, proj, cfg.projection, G)
        if on_iteration is not None and on_iteration(k, proj):
            break
        if not grew:
            break
    return proj, k, G


def kpik_solve(p: SteinProblem, cfg: SolverConfig | None = None):
    """Inexact KPIK: Galerkin projection on growing extended Krylov spaces.

    Stops once the true relative Stein residual is below
    ``cfg.rel_residual_tol``. The returned solution keeps the full rank of
    the projected solution (no ``cfg.trunc`` truncation is applied).
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    m, n = p.shape
    normC = fro_norm(p.rhs)
    if normC == 0:
        X = LowRankMatrix.zeros(m, n)
        return X, SolverReport("kpik", 0, 0, time.perf_counter() - t0, 0.0, True)
    p = SteinProblem(p.KO, p.KI, p.sigma2, truncate(p.rhs, TruncationPolicy(0.0)))
    history = []

    def check(k, proj):
        history.append(_projected_residual_norm(p, proj) / normC)
        return history[-1] <= cfg.rel_residual_tol

    proj, k, G = kpik_project(p, cfg.max_iter, cfg, on_iteration=check)
    X = truncate(proj.solution(), TruncationPolicy(0.0))
    res = rel_residual(p, X)
    converged = res <= cfg.rel_residual_tol
    msg = ""
    if not converged:
        stalled = k < cfg.max_iter
        msg = "Krylov spaces stopped growing" if stalled else f"max_iter={cfg.max_iter} reached"
    extras = {
        "basis_dims": (proj.left.dim, proj.right.dim),
        "inner_residuals": _inner_residuals(p),
        "galerkin_residual": _galerkin_residual_norm(p, proj, G) / normC,
    }
    report = SolverReport("kpik", k, X.rank, time.perf_counter() - t0, res, converged,
                          history, msg, extras)
    return X, report


def _inner_residuals(p: SteinProblem):
    """Relative residuals of one solve with each operator, for diagnostics."""
    out = {}
    for name, op, b in (("KO", p.KO, p.rhs.U[:, :1]), ("KI", p.KI, p.rhs.V[:, :1])):
        z = op.solve(b)
        out[name] = float(la.norm(op.apply(z) - b) / la.norm(b))
    return out


def _galerkin_residual_norm(p, proj, G):
    """``||Q_L^T R Q_R||_F`` for the residual of the equation that was projected."""
    L, R, Y = proj.left, proj.right, proj.Y
    T = L.Q.T @ L.FQ
    lhs = L.Q.T @ p.rhs.U
    # Q_L^T (Q_L Y) = Y since the basis is orthonormal
    if proj.projection == "sylvester":
        res = lhs @ (R.Q.T @ G).T - T @ Y - p.sigma2 * Y @ (R.Q.T @ R.FQ)
    else:
        res = lhs @ (R.Q.T @ p.rhs.V).T - T @ Y @ (R.Q.T @ R.IQ) - p.sigma2 * Y
    return float(la.norm(res))


# Preconditioned conjugate gradients on low-rank iterates ======================


def _kpik_preconditioner(p: SteinProblem, cfg: SolverConfig):
    steps = cfg.precond_kpik_steps

    def apply(R: LowRankMatrix) -> LowRankMatrix:
        if steps == 0 or R.rank == 0:
            return R
        Rc = truncate(R, TruncationPolicy(0.0))
        if Rc.rank == 0:
            return Rc
        sub = SteinProblem(p.KO, p.KI, p.sigma2, Rc)
        proj, _, _ = kpik_project(sub, steps, cfg)
        return truncate(proj.solution(), cfg.trunc)

    return apply


def lrpcg_solve(p: SteinProblem, cfg: SolverConfig | None = None):
    """Low-rank preconditioned CG with a few KPIK steps as preconditioner.

    Every iterate is truncated with ``cfg.trunc``. Convergence is judged on
    the true relative residual of the current iterate, recomputed each
    iteration. When the recursively updated residual drifts from the true
    one by more than a factor 2 it is replaced by the true residual and the
    search direction restarts. On loss of positive curvature the method
    restarts once from the true residual; a second breakdown raises
    ``BreakdownError``.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    m, n = p.shape
    pol = cfg.trunc
    X = LowRankMatrix.zeros(m, n)
    normC = fro_norm(p.rhs)
    if normC == 0:
        return X, SolverReport("lrpcg", 0, 0, time.perf_counter() - t0, 0.0, True)
    precond = _kpik_preconditioner(p, cfg)
    flexible = cfg.beta == "polak_ribiere"

    def A(Z):
        return stein_apply(p.KO, p.KI, p.sigma2, Z, pol)

    def restart(R):
        Z = precond(R)
        return R, Z, Z, trace_prod(R, Z)

    R, Z, P, rz = restart(truncate(p.rhs, pol))
    history = []
    restarted = False
    replacements = 0
    res = 1.0
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        T = A(P)
        curv = trace_prod(P, T)
        if not (curv > 0 and rz > 0):
            report = SolverReport("lrpcg", it, X.rank, time.perf_counter() - t0, res, False,
                                  history, f"non-positive curvature {curv:.3e}")
            if restarted:
                raise BreakdownError(report.message, X, report)
            restarted = True
            R, Z, P, rz = restart(truncate(_residual(p, X), pol))
            T = A(P)
            curv = trace_prod(P, T)
            if not (curv > 0 and rz > 0):
                report.message += " (after restart)"
                raise BreakdownError(report.message, X, report)
        step = rz / curv
        X = lr_sum(X, P, step, pol)
        R_old = R
        R = lr_sum(R, T, -step, pol)
        true_R = _residual(p, X)
        true_norm = fro_norm(true_R)
        res = true_norm / normC
        history.append(res)
        if res <= cfg.rel_residual_tol:
            converged = True
            break
        rec_norm = fro_norm(R)
        replaced = not (0.5 * true_norm <= rec_norm <= 2.0 * true_norm)
        if replaced:
            R = truncate(true_R, pol)
            replacements += 1
        Z = precond(R)
        rz_new = trace_prod(R, Z)
        if replaced:
            beta = 0.0
        elif flexible:
            beta = max(0.0, (rz_new - trace_prod(R_old, Z)) / rz)
        else:
            beta = rz_new / rz
        P = lr_sum(Z, P, beta, pol)
        rz = rz_new
    msg = "" if converged else f"max_iter={cfg.max_iter} reached"
    report = SolverReport("lrpcg", it, X.rank, time.perf_counter() - t0, res, converged,
                          history, msg, {"residual_replacements": replacements})
    return X, report


SOLVERS = {"kpik": kpik_solve, "lrpcg": lrpcg_solve}


def solve(p: SteinProblem, solver: str = "lrpcg", cfg: SolverConfig | None = None):
    """Dispatch to ``kpik_solve`` or ``lrpcg_solve`` by name."""
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(p, cfg)
