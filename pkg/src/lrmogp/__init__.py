"""Low-rank multi-output Gaussian process regression on graphs.

The posterior mean of a separable (input kernel x graph filter) GP is
obtained from the Stein equation ``K_O X K_I + sigma2 X = Y``, solved in
low-rank form by extended Krylov projection or preconditioned CG.
"""

from .errors import *  # noqa: F401,F403
from .graph_core import (
    Graph,
    NodePartition,
    degree_vector,
    grid_graph,
    laplacian,
    laplacian_apply,
    load_edge_list,
    partition_nodes,
    save_edge_list,
)
from .kernels import SEKernelParams, gram, se_kernel, spd_operator
from .lowrank import LowRankMatrix, TruncationPolicy, fro_norm, lr_sum, stein_apply, trace_prod, truncate
from .mogp import RegressionTask, dense_gp_oracle, posterior_mean
from .operators import CovarianceOperator, DiagonalOperator, IdentityOperator
from .stein_solvers import (
    SolverConfig,
    SolverReport,
    SteinProblem,
    dense_kron_solve,
    eig_stein_solve,
    kpik_solve,
    lrpcg_solve,
    rel_residual,
    smith_solve,
)

__version__ = "0.1.0"
