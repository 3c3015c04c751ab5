"""Posterior mean of the graph multi-output GP through the Stein equation.

With training covariance ``K_I kron K_O + sigma2 I`` the mean at the
targets is ``(K_I*^T kron K_O*^T) vec(X)`` where ``X`` solves
``K_O X K_I + sigma2 X = Y``. For ``X = U V^T`` this is
``M* = (K_O*^T U)(K_I*^T V)^T``, so only the factors are mapped.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import BreakdownError, DimensionError, SizeGuardError, UnsupportedCaseError
from .graph_core import Graph, NodePartition
from .graph_filters import (
    GlobalFilterParams,
    LocalAverageParams,
    dwa_model,
    global_filter_operator,
    local_average_operator,
)
from .kernels import SEKernelParams, gram, spd_operator_with_fallback
from .lowrank import LowRankMatrix
from .operators import CovarianceOperator, DiagonalOperator
from .stein_solvers import (
    DENSE_LIMIT,
    SolverConfig,
    SolverReport,
    SteinProblem,
    dense_kron_solve,
    eig_stein_solve,
    kpik_solve,
    lrpcg_solve,
    rel_residual,
)

__all__ = [
    "MODELS",
    "RegressionTask",
    "AssembledProblem",
    "PosteriorMean",
    "assemble_problem",
    "solve_assembled",
    "posterior_mean",
    "dense_gp_oracle",
    "dense_posterior_covariance",
]

MODELS = ("global_filter", "local_average", "dwa", "custom")


@dataclass(frozen=True, eq=False)
class RegressionTask:
    """Everything needed to form and solve one posterior-mean problem.

    Parameters
    ----------
    model : str
        ``"global_filter"``, ``"local_average"``, ``"dwa"`` or ``"custom"``.
        ``"custom"`` uses ``output_covariance`` as ``K_O = K_O* = K_O**``.
    train_inputs, target_inputs : ndarray
        Input points as columns, shapes ``(c, n)`` and ``(c, n*)``; 1-D
        arrays are read as scalar points.
    Y : LowRankMatrix
        Training outputs, one row per output node, one column per input.
    partition : NodePartition, optional
        Required by the DWA model: inputs are training nodes, outputs are
        target nodes.
    """

    model: str
    train_inputs: np.ndarray
    target_inputs: np.ndarray
    Y: LowRankMatrix
    sigma2: float = 5e-3
    kernel: SEKernelParams = field(default_factory=SEKernelParams)
    alpha: float = 1.0
    graph: Graph | None = None
    partition: NodePartition | None = None
    output_covariance: CovarianceOperator | None = None
    target_nodes: np.ndarray | None = None
    target_times: np.ndarray | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.model == "custom" and self.output_covariance is None:
            raise ValueError("custom model needs output_covariance")
        if self.model != "custom" and self.graph is None:
            raise ValueError(f"model {self.model!r} needs a graph")
        if self.model == "dwa" and self.partition is None:
            raise ValueError("DWA model needs a node partition")
        n = np.atleast_1d(self.train_inputs).shape[-1]
        if self.Y.shape[1] != n:
            raise DimensionError(f"Y has {self.Y.shape[1]} columns but there are {n} training inputs")

    @property
    def n_targets(self):
        return np.atleast_1d(self.target_inputs).shape[-1]


@dataclass(frozen=True, eq=False)
class AssembledProblem:
    problem: SteinProblem
    KI_cross: np.ndarray  # n x n*
    cross_apply: object  # maps (m, k) blocks to (m*, k) with K_O*^T
    target_nodes: np.ndarray


def _output_operator(task: RegressionTask):
    if task.model == "custom":
        KO = task.output_covariance
        return KO, KO.apply, np.arange(KO.dim)
    if task.model == "global_filter":
        KO = global_filter_operator(task.graph, GlobalFilterParams(task.alpha))
        return KO, KO.apply, np.arange(KO.dim)
    if task.model == "local_average":
        KO = local_average_operator(task.graph, LocalAverageParams(task.alpha))
        return KO, KO.apply, np.arange(KO.dim)
    m = dwa_model(task.graph, task.partition)
    return DiagonalOperator(m.D1), m.cross_apply, m.target_nodes


def assemble_problem(task: RegressionTask) -> AssembledProblem:
    """Build ``K_O``, ``K_I``, ``K_I*`` and the output cross map for ``task``."""
    KO, cross, targets = _output_operator(task)
    if KO.dim != task.Y.shape[0]:
        raise DimensionError(f"output covariance has dim {KO.dim}, Y has {task.Y.shape[0]} rows")
    KI = spd_operator_with_fallback(gram(task.train_inputs, task.train_inputs, task.kernel))
    KI_cross = gram(task.train_inputs, task.target_inputs, task.kernel)
    if task.target_nodes is not None:
        targets = np.asarray(task.target_nodes)
    return AssembledProblem(SteinProblem(KO, KI, task.sigma2, task.Y), KI_cross, cross, targets)


@dataclass(frozen=True, eq=False)
class PosteriorMean:
    """``M*`` in factored form, rows labelled by node, columns by target time."""

    matrix: LowRankMatrix
    node_ids: np.ndarray
    time_labels: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self):
        return self.matrix.dense()

    def to_csv(self, path):
        M = self.dense()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node"] + [str(t) for t in self.time_labels])
            for node, row in zip(self.node_ids, M):
                w.writerow([str(node)] + [repr(float(v)) for v in row])


def _labels(task: RegressionTask):
    if task.target_times is not None:
        return np.asarray(task.target_times)
    return np.arange(task.n_targets)


def _dense_solution(a: AssembledProblem, solver, cfg):
    t0 = time.perf_counter()
    fn = dense_kron_solve if solver == "dense" else eig_stein_solve
    X = fn(a.problem)
    n = X.shape[1]
    Xl = LowRankMatrix(X, np.eye(n))
    res = rel_residual(a.problem, Xl)
    rep = SolverReport(solver, 1, int(np.linalg.matrix_rank(X)) if X.size else 0,
                       time.perf_counter() - t0, res, res <= cfg.rel_residual_tol, [res])
    return Xl, rep


def solve_assembled(a: AssembledProblem, solver="lrpcg", cfg: SolverConfig | None = None):
    """Run ``solver`` on the assembled Stein problem.

    LR-PCG breakdowns are returned as a non-converged report with the last
    iterate instead of raising.
    """
    cfg = cfg or SolverConfig()
    if solver in ("dense", "eig"):
        return _dense_solution(a, solver, cfg)
    if solver == "kpik":
        return kpik_solve(a.problem, cfg)
    if solver == "lrpcg":
        try:
            return lrpcg_solve(a.problem, cfg)
        except BreakdownError as exc:
            X = exc.solution
            rep = exc.report
            rep.rel_residual = rel_residual(a.problem, X)
            return X, rep
    raise ValueError(f"unknown solver {solver!r}")


def posterior_mean(task: RegressionTask, solver="lrpcg", cfg: SolverConfig | None = None):
    """Solve the Stein equation and map the factors to ``M* = (K_O*^T U)(K_I*^T V)^T``."""
    a = assemble_problem(task)
    X, report = solve_assembled(a, solver, cfg)
    U = np.asarray(a.cross_apply(X.U)) if X.rank else np.zeros((a.target_nodes.size, 0))
    M = LowRankMatrix(U, a.KI_cross.T @ X.V)
    return PosteriorMean(M, a.target_nodes, _labels(task)), report


# Dense oracles ================================================================


def _dense_blocks(task: RegressionTask):
    """Dense ``K_O``, ``K_O*`` (m x m*), ``K_I``, ``K_I*``."""
    a = assemble_problem(task)
    KO = a.problem.KO.to_dense()
    KO_cross = np.asarray(a.cross_apply(np.eye(KO.shape[0]))).T
    KI = gram(task.train_inputs, task.train_inputs, task.kernel)
    KI_cross = a.KI_cross
    return a, KO, KO_cross, KI, KI_cross


def dense_gp_oracle(task: RegressionTask) -> PosteriorMean:
    """``mu* = K*^T (K + sigma2 I)^{-1} y`` on the Kronecker-assembled system."""
    m, n = task.Y.shape
    if m * n > DENSE_LIMIT:
        raise SizeGuardError(f"dense oracle limited to m*n <= {DENSE_LIMIT}, got {m * n}")
    a, KO, KO_cross, KI, KI_cross = _dense_blocks(task)
    K = np.kron(KI, KO) + task.sigma2 * np.eye(m * n)
    y = task.Y.dense().reshape(-1, order="F")
    mu = np.kron(KI_cross, KO_cross).T @ la.solve(K, y, assume_a="pos")
    M = mu.reshape((KO_cross.shape[1], KI_cross.shape[1]), order="F")
    return PosteriorMean(LowRankMatrix(M, np.eye(M.shape[1])), a.target_nodes, _labels(task))


def dense_posterior_covariance(task: RegressionTask) -> np.ndarray:
    """``K** - K*^T (K + sigma2 I)^{-1} K*`` with Kronecker blocks.

    Filter and custom models use ``K_O** = K_O``. The DWA model is only
    covered when no two target nodes are adjacent, with ``K_O** = D2``.
    """
    m, n = task.Y.shape
    n_star = task.n_targets
    if m * n > DENSE_LIMIT or m * n_star > DENSE_LIMIT:
        raise SizeGuardError("dense posterior covariance exceeds the size guard")
    a, KO, KO_cross, KI, KI_cross = _dense_blocks(task)
    if task.model == "dwa":
        dm = dwa_model(task.graph, task.partition)
        if not dm.simple:
            raise UnsupportedCaseError("DWA posterior covariance needs W22 = 0")
        KO_star2 = np.diag(dm.D2)
    else:
        KO_star2 = KO
    KI_star2 = gram(task.target_inputs, task.target_inputs, task.kernel)
    K = np.kron(KI, KO) + task.sigma2 * np.eye(m * n)
    Kc = np.kron(KI_cross, KO_cross)
    S = np.kron(KI_star2, KO_star2) - Kc.T @ la.solve(K, Kc, assume_a="pos")
    return 0.5 * (S + S.T)
