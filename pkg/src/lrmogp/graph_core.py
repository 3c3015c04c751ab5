"""Undirected weighted graphs: loading, degrees, Laplacians and node splits."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConnectivityError, DimensionError, MalformedInputError

__all__ = [
    "Graph",
    "NodePartition",
    "load_edge_list",
    "save_edge_list",
    "degree_vector",
    "laplacian",
    "laplacian_apply",
    "partition_nodes",
    "grid_graph",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Sparse undirected weighted graph.

    ``adjacency`` is a symmetric CSR matrix with strictly positive
    off-diagonal entries and an empty diagonal.
    """

    adjacency: sp.csr_matrix

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return sp.triu(self.adjacency, k=1).nnz

    @property
    def degrees(self) -> np.ndarray:
        return degree_vector(self)

    def edges(self):
        """Canonical sorted edge list ``[(u, v, w), ...]`` with ``u < v``."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [
            (int(upper.row[i]), int(upper.col[i]), float(upper.data[i]))
            for i in order
        ]

    def n_components(self) -> int:
        return connected_components(self.adjacency, directed=False)[0]

    @classmethod
    def from_edges(cls, node_count, edges, check_connected="raise") -> "Graph":
        """Build a graph from ``(u, v)`` or ``(u, v, w)`` tuples.

        Edges are symmetrized and self-loops dropped. Duplicates keep the
        weight of the last occurrence. ``check_connected`` is one of
        ``"raise"``, ``"warn"`` or ``"ignore"``.
        """
        if node_count < 1:
            raise MalformedInputError("graph needs at least one node")
        weights = {}
        for e in edges:
            u, v = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise MalformedInputError(f"edge ({u}, {v}) out of range")
            if not w > 0.0:
                raise MalformedInputError(f"edge ({u}, {v}) has non-positive weight {w}")
            if u == v:
                continue
            weights[(min(u, v), max(u, v))] = w
        if weights:
            uv = np.array(list(weights.keys()), dtype=np.int64)
            w = np.array(list(weights.values()))
            rows = np.concatenate([uv[:, 0], uv[:, 1]])
            cols = np.concatenate([uv[:, 1], uv[:, 0]])
            data = np.concatenate([w, w])
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        A = sp.csr_matrix((data, (rows, cols)), shape=(node_count, node_count))
        A.sort_indices()
        g = cls(A)
        _check_connected(g, check_connected)
        return g

    @classmethod
    def from_adjacency(cls, W, check_connected="raise") -> "Graph":
        W = sp.csr_matrix(W, dtype=float)
        if W.shape[0] != W.shape[1]:
            raise DimensionError("adjacency must be square")
        upper = sp.triu(W, k=1).tocoo()
        edges = zip(upper.row, upper.col, upper.data)
        if abs(W - W.T).max() > 0:
            raise MalformedInputError("adjacency is not symmetric")
        return cls.from_edges(W.shape[0], edges, check_connected)


def _check_connected(g, mode):
    if mode == "ignore" or g.node_count == 1:
        return
    k = g.n_components()
    if k == 1:
        return
    if mode == "raise":
        raise ConnectivityError(k)
    warnings.warn(f"graph is disconnected ({k} components)", stacklevel=3)


@dataclass(frozen=True)
class NodePartition:
    """Disjoint split of the node set into input and output nodes."""

    input_nodes: np.ndarray
    output_nodes: np.ndarray
    seed: int | None = None


def load_edge_list(path, check_connected="raise") -> Graph:
    """Read a whitespace separated ``u v [w]`` edge list.

    Lines starting with ``#`` and blank lines are skipped. Node ids are
    0-based and the node count is one more than the largest id seen, unless
    a ``# nodes N`` header (as written by :func:`save_edge_list`) says more.
    """
    edges = []
    max_id = -1
    declared = 0
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.fullmatch(r"#\s*nodes\s+(\d+)", line)
            if m:
                declared = int(m.group(1))
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise MalformedInputError(f"expected 'u v [w]', got {raw!r}", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise MalformedInputError(f"cannot parse {raw!r}", lineno) from None
        if u < 0 or v < 0:
            raise MalformedInputError("negative node id", lineno)
        if not w > 0.0:
            raise MalformedInputError(f"non-positive weight {w}", lineno)
        edges.append((u, v, w))
        max_id = max(max_id, u, v)
    n = max(max_id + 1, declared)
    if n == 0:
        raise MalformedInputError("edge list is empty")
    return Graph.from_edges(n, edges, check_connected)


def save_edge_list(g: Graph, path) -> None:
    lines = [f"# nodes {g.node_count}"]
    lines += [f"{u} {v} {w!r}" for u, v, w in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def degree_vector(g: Graph) -> np.ndarray:
    """Row sums of the weight matrix."""
    return np.asarray(g.adjacency.sum(axis=1)).ravel()


def laplacian(g: Graph, normalized=False) -> sp.csr_matrix:
    """Sparse ``L = D - W`` or ``D^{-1/2} L D^{-1/2}``."""
    d = degree_vector(g)
    L = sp.diags(d) - g.adjacency
    if normalized:
        s = sp.diags(1.0 / np.sqrt(d))
        L = s @ L @ s
    return sp.csr_matrix(L)


def laplacian_apply(g: Graph, x, normalized=False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != g.node_count:
        raise DimensionError(f"vector has length {x.shape[0]}, graph has {g.node_count} nodes")
    d = degree_vector(g)
    if x.ndim == 2:
        d = d[:, None]
    if not normalized:
        return d * x - g.adjacency @ x
    s = 1.0 / np.sqrt(d)
    y = s * x
    return s * (d * y - g.adjacency @ y)


def partition_nodes(g: Graph, input_fraction: float, seed: int) -> NodePartition:
    """Seeded shuffle of the nodes followed by a prefix split.

    The input side receives ``round(input_fraction * n)`` nodes (half-up).
    """
    n = g.node_count
    if not 0.0 < input_fraction < 1.0:
        raise ValueError(f"input_fraction must lie in (0, 1), got {input_fraction}")
    n_in = int(np.floor(input_fraction * n + 0.5))
    if n_in < 1 or n_in > n - 1:
        raise ValueError(f"fraction {input_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return NodePartition(perm[:n_in].copy(), perm[n_in:].copy(), seed)


def grid_graph(rows: int, cols: int, diagonal_prob=0.0, seed=0) -> Graph:
    """Street-like test graph: a lattice with random diagonal shortcuts.

    Diagonals create odd cycles, so any ``diagonal_prob > 0`` almost surely
    makes the graph non-bipartite.
    """
    rng = np.random.default_rng(seed)
    idx = np.arange(rows * cols).reshape(rows, cols)
    edges = []
    edges += zip(idx[:, :-1].ravel(), idx[:, 1:].ravel())
    edges += zip(idx[:-1, :].ravel(), idx[1:, :].ravel())
    if diagonal_prob > 0:
        a, b = idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()
        keep = rng.random(a.size) < diagonal_prob
        edges += zip(a[keep], b[keep])
    return Graph.from_edges(rows * cols, list(edges))
