"""Synthetic graph signals and the train/target split used by the experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ._factor import SparseSPDFactor
from .errors import ConvergenceError, DimensionError
from .graph_core import Graph, NodePartition, degree_vector, laplacian
from .lowrank import TruncationPolicy, compress_dense

__all__ = [
    "AllenCahnParams",
    "DataMatrix",
    "TimeSplit",
    "SplitData",
    "allen_cahn_generate",
    "stationary_distribution",
    "stationary_generate",
    "split_time",
    "split_dataset",
    "compress_training_outputs",
]


@dataclass(frozen=True)
class AllenCahnParams:
    eps: float = 0.08
    diff: float = 100.0
    tau: float = 5e-4
    n_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("eps", "diff", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Node-by-time signal matrix with the node id of each row and time index of each column."""

    values: np.ndarray
    node_ids: np.ndarray
    time_ids: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("values must be a 2-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("data matrix contains NaN or Inf")
        nodes = np.asarray(self.node_ids, dtype=np.int64)
        times = np.asarray(self.time_ids, dtype=np.int64)
        if nodes.shape != (v.shape[0],) or times.shape != (v.shape[1],):
            raise DimensionError("index maps do not match the matrix shape")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "node_ids", nodes)
        object.__setattr__(self, "time_ids", times)

    @classmethod
    def from_values(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(v, np.arange(v.shape[0]), np.arange(v.shape[1]))

    @property
    def shape(self):
        return self.values.shape

    def save(self, path):
        """Write ``path`` (header-free CSV) and ``path + '.index.json'``."""
        path = Path(path)
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")
        index = {"node_ids": self.node_ids.tolist(), "time_ids": self.time_ids.tolist()}
        Path(str(path) + ".index.json").write_text(json.dumps(index))

    @classmethod
    def load(cls, path):
        path = Path(path)
        values = np.loadtxt(path, delimiter=",", ndmin=2)
        side = Path(str(path) + ".index.json")
        if side.exists():
            index = json.loads(side.read_text())
            return cls(values, index["node_ids"], index["time_ids"])
        return cls.from_values(values)


def allen_cahn_generate(g: Graph, p: AllenCahnParams, u0=None) -> DataMatrix:
    """Semi-implicit Allen-Cahn time stepping on ``g``.

    ``(I + tau eps D L) u_{k+1} = u_k + (tau/eps) (u_k - u_k^3)`` with one
    factorization reused for every step. ``u_1`` is drawn uniformly from
    ``[-1, 1]`` unless given.
    """
    n = g.node_count
    if u0 is None:
        u = np.random.default_rng(p.seed).uniform(-1.0, 1.0, n)
    else:
        u = np.array(u0, dtype=float).ravel()
        if u.size != n:
            raise DimensionError(f"u0 has length {u.size}, graph has {n} nodes")
    A = sp.csc_matrix(sp.identity(n) + (p.tau * p.eps * p.diff) * laplacian(g))
    factor = SparseSPDFactor(A)
    r = p.tau / p.eps
    out = np.empty((n, p.n_steps))
    out[:, 0] = u
    for k in range(1, p.n_steps):
        u = factor.solve(u + r * (u - u**3))
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite values at step {k + 1}")
        out[:, k] = u
    return DataMatrix.from_values(out)


def stationary_distribution(g: Graph, tol=1e-6, max_iter=1_000_000):
    """Power iteration ``s <- P^T s`` from ``e_1`` with ``P = D^{-1} W``.

    Stops when ``||s_{k+1} - s_k||_2 < tol``. Bipartite graphs oscillate and
    end in ``ConvergenceError``.
    """
    d = degree_vector(g)
    if np.any(d <= 0):
        raise ValueError("graph has isolated nodes")
    W = sp.csr_matrix(g.adjacency)
    inv_d = 1.0 / d
    s = np.zeros(g.node_count)
    s[0] = 1.0
    delta = np.inf
    for _ in range(max_iter):
        # P^T s = W D^{-1} s for symmetric W
        s_new = W @ (inv_d * s)
        delta = np.linalg.norm(s_new - s)
        s = s_new
        if delta < tol:
            return s
    raise ConvergenceError(
        f"stationary iteration did not converge in {max_iter} steps (last delta {delta:.3e})", s
    )


def stationary_generate(g: Graph, n_cols=100, noise_std=None, seed=0, tol=1e-6,
                        max_iter=1_000_000) -> tuple[DataMatrix, np.ndarray, float]:
    """Replicate the stationary vector ``n_cols`` times and add Gaussian noise.

    ``noise_std=None`` means ``1e-2 * max(s)``. Returns the data, the
    noise-free stationary vector and the noise level actually used.
    """
    s = stationary_distribution(g, tol, max_iter)
    if noise_std is None:
        noise_std = 1e-2 * float(s.max())
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    values = np.repeat(s[:, None], n_cols, axis=1)
    if noise_std > 0:
        values = values + noise_std * rng.standard_normal(values.shape)
    return DataMatrix.from_values(values), s, float(noise_std)


@dataclass(frozen=True)
class TimeSplit:
    """Fraction of time columns used for training.

    ``layout="strided"`` takes every k-th column, ``"prefix"`` the leading ones.
    """

    train_fraction: float = 0.1
    layout: str = "strided"

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.layout not in ("strided", "prefix"):
            raise ValueError(f"unknown layout {self.layout!r}")


def split_time(n_times: int, split: TimeSplit):
    """Return ``(train, target)`` column indices; targets are all columns."""
    n_train = int(np.floor(split.train_fraction * n_times + 0.5))
    if n_train < 1:
        raise ValueError(f"time split leaves no training columns out of {n_times}")
    if split.layout == "prefix":
        train = np.arange(n_train)
    else:
        train = np.floor(np.arange(n_train) * (n_times / n_train)).astype(np.int64)
    return train, np.arange(n_times)


@dataclass(frozen=True, eq=False)
class SplitData:
    """Dense blocks of one regression problem.

    ``train_inputs`` and ``target_inputs`` hold points as columns; ``Y``
    has one row per ``output_nodes`` entry and one column per training
    point. ``truth`` is the data at ``target_nodes`` x target points.
    """

    model: str
    train_inputs: np.ndarray
    target_inputs: np.ndarray
    Y: np.ndarray
    output_nodes: np.ndarray
    target_nodes: np.ndarray
    target_times: np.ndarray
    truth: np.ndarray


def split_dataset(d: DataMatrix, part: NodePartition, split: TimeSplit, model="filter") -> SplitData:
    """Extract training and target blocks.

    Filter model: inputs are the signals on ``part.input_nodes``, outputs
    are all nodes. DWA model: inputs are time indices, outputs are the
    training nodes ``part.input_nodes``, targets the remaining nodes.
    """
    train_t, target_t = split_time(d.shape[1], split)
    inp = np.asarray(part.input_nodes, dtype=np.int64)
    out = np.asarray(part.output_nodes, dtype=np.int64)
    if inp.size == 0 or out.size == 0:
        raise ValueError("node partition has an empty side")
    D = d.values
    times = d.time_ids.astype(float)
    if model == "filter":
        all_nodes = np.arange(D.shape[0])
        return SplitData("filter", D[np.ix_(inp, train_t)], D[np.ix_(inp, target_t)],
                         D[:, train_t], all_nodes, all_nodes, d.time_ids[target_t], D[:, target_t])
    if model == "dwa":
        return SplitData("dwa", times[train_t][None, :], times[target_t][None, :],
                         D[np.ix_(inp, train_t)], inp, out, d.time_ids[target_t],
                         D[np.ix_(out, target_t)])
    raise ValueError(f"unknown model {model!r}")


def compress_training_outputs(Y, policy: TruncationPolicy | None = None):
    """Truncated SVD of ``Y``; returns ``(LowRankMatrix, retained_rank, tail_error)``."""
    policy = policy or TruncationPolicy(1e-10)
    X, tail = compress_dense(Y, policy)
    return X, X.rank, tail

