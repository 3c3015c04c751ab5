import numpy as np
import pytest
import scipy.linalg as la

from lrmogp.errors import DegeneratePartitionError, NotPositiveDefiniteError, SelectionError, UnsupportedCaseError
from lrmogp.graph_core import Graph, NodePartition, laplacian
from lrmogp.graph_filters import (
    GlobalFilterParams,
    LocalAverageParams,
    Selection,
    dwa_covariance_dense,
    dwa_model,
    dwa_output_operators,
    gershgorin_psd_check,
    global_filter_operator,
    local_average_operator,
    submatrix_global_operator,
    submatrix_local_operator,
)

from conftest import random_graph


def dense_global(g, alpha):
    S = np.eye(g.node_count) + alpha * laplacian(g).toarray()
    Si = np.linalg.inv(S)
    return Si @ Si


def dense_local(g, alpha):
    W = g.adjacency.toarray()
    Dinv = np.diag(1.0 / (1.0 + alpha * W.sum(1)))
    IW = np.eye(g.node_count) + alpha * W
    return Dinv @ IW @ IW @ Dinv


def star_graph():
    """Target v* (node 0) joined to v1 (node 1, degree 2) and v2 (node 2, degree 5)."""
    edges = [(0, 1), (0, 2), (1, 3), (2, 4), (2, 5), (2, 6), (2, 7)]
    return Graph.from_edges(8, edges)


def _probe_operator(op, rng, tol=1e-10):
    n = op.dim
    X = rng.standard_normal((n, 100))
    Y = rng.standard_normal((n, 100))
    KX, KY = op.apply(X), op.apply(Y)
    sym = np.abs(np.sum(X * KY, 0) - np.sum(Y * KX, 0))
    assert np.all(sym <= tol * np.linalg.norm(X, axis=0) * np.linalg.norm(Y, axis=0) * max(1, np.abs(KX).max()))
    assert np.all(np.sum(X * KX, 0) >= -tol * np.sum(X * X, 0))
    Z = op.apply(op.solve(X))
    assert np.linalg.norm(Z - X) <= 1e-8 * np.linalg.norm(X)


def test_global_filter_examples():
    g = Graph.from_edges(2, [(0, 1)])
    op = global_filter_operator(g, GlobalFilterParams(1.0))
    np.testing.assert_allclose(op.apply([1.0, 0.0]), [5 / 9, 4 / 9], rtol=1e-14)
    h = random_graph(20, seed=1)
    op = global_filter_operator(h, GlobalFilterParams(2.0))
    np.testing.assert_allclose(op.apply(np.ones(20)), 1.0, rtol=1e-12)
    tiny = global_filter_operator(h, GlobalFilterParams(1e-12))
    x = np.random.default_rng(0).standard_normal(20)
    np.testing.assert_allclose(tiny.apply(x), x, rtol=1e-9, atol=1e-9)


def test_global_filter_matches_dense(rng):
    g = random_graph(30, seed=2)
    op = global_filter_operator(g, GlobalFilterParams(0.7))
    np.testing.assert_allclose(op.to_dense(), dense_global(g, 0.7), atol=1e-12)
    _probe_operator(op, rng)
    X = rng.standard_normal((30, 50))
    rq = np.sum(X * op.apply(X), 0) / np.sum(X * X, 0)
    assert rq.min() > 0 and rq.max() <= 1 + 1e-12


def test_local_average_examples(rng):
    edgeless = Graph.from_edges(4, [], check_connected="ignore")
    np.testing.assert_allclose(local_average_operator(edgeless, LocalAverageParams(0.3)).to_dense(), np.eye(4))
    cycle = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    op = local_average_operator(cycle, LocalAverageParams(0.2))
    np.testing.assert_allclose(op.apply(np.ones(4)), 1.0, rtol=1e-14)
    path = Graph.from_edges(2, [(0, 1)])
    op = local_average_operator(path, LocalAverageParams(0.1))
    np.testing.assert_allclose(op.to_dense(), dense_local(path, 0.1), rtol=1e-12)


def test_local_average_matches_dense(rng):
    g = random_graph(30, seed=4)
    op = local_average_operator(g, LocalAverageParams(0.1))
    np.testing.assert_allclose(op.to_dense(), dense_local(g, 0.1), atol=1e-13)
    _probe_operator(op, rng)


def test_local_average_large_alpha_raises():
    # on a path the factor (I + aW)(I + aD)^{-1} is singular at a = 1
    path = Graph.from_edges(2, [(0, 1)])
    with pytest.raises(NotPositiveDefiniteError):
        local_average_operator(path, LocalAverageParams(1.0))


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_filter_params_validation(alpha):
    with pytest.raises(ValueError):
        GlobalFilterParams(alpha)
    with pytest.raises(ValueError):
        LocalAverageParams(alpha)


def test_submatrix_global_full_selection(rng):
    g = random_graph(20, seed=6)
    p = GlobalFilterParams(1.3)
    full = global_filter_operator(g, p)
    sub = submatrix_global_operator(g, p, Selection.principal(np.arange(20)))
    X = rng.standard_normal((20, 5))
    np.testing.assert_allclose(sub.apply(X), full.apply(X), atol=1e-10)
    np.testing.assert_allclose(sub.solve(X), full.solve(X), rtol=1e-10, atol=1e-10)


def test_submatrix_global_single_node():
    g = random_graph(18, seed=7)
    ref = dense_global(g, 1.0)
    sub = submatrix_global_operator(g, GlobalFilterParams(1.0), Selection.principal([5]))
    np.testing.assert_allclose(sub.apply([2.0]), [2.0 * ref[5, 5]], rtol=1e-12)


def test_submatrix_global_against_dense_oracle(rng):
    g = random_graph(30, seed=8)
    idx = rng.choice(30, 10, replace=False)
    ref = dense_global(g, 0.9)[np.ix_(idx, idx)]
    sub = submatrix_global_operator(g, GlobalFilterParams(0.9), Selection.principal(idx))
    np.testing.assert_allclose(sub.to_dense(), ref, atol=1e-12)
    X = rng.standard_normal((10, 4))
    np.testing.assert_allclose(sub.solve(X), np.linalg.solve(ref, X), rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(sub.solve(sub.apply(X)), X, rtol=1e-8, atol=1e-8)
    _probe_operator(sub, rng)


def test_submatrix_local_against_dense_oracle(rng):
    g = random_graph(30, seed=9)
    p = LocalAverageParams(0.1)
    idx = rng.choice(30, 12, replace=False)
    sub = submatrix_local_operator(g, p, Selection.principal(idx))
    np.testing.assert_allclose(sub.to_dense(), dense_local(g, 0.1)[np.ix_(idx, idx)], atol=1e-13)
    full = submatrix_local_operator(g, p, Selection.principal(np.arange(30)))
    np.testing.assert_allclose(full.to_dense(), local_average_operator(g, p).to_dense(), atol=1e-10)
    edgeless = Graph.from_edges(6, [], check_connected="ignore")
    sub0 = submatrix_local_operator(edgeless, p, Selection.principal([1, 4]))
    np.testing.assert_allclose(sub0.to_dense(), np.eye(2))
    _probe_operator(sub, rng)


@pytest.mark.parametrize("sel", [Selection.principal([]), Selection.principal([0, 0]), Selection.principal([0, 30]),
                                 Selection(np.array([0, 1]), np.array([0, 2]))])
def test_selection_errors(sel):
    g = random_graph(30, seed=1)
    with pytest.raises(SelectionError):
        submatrix_global_operator(g, GlobalFilterParams(1.0), sel)
    with pytest.raises(SelectionError):
        submatrix_local_operator(g, LocalAverageParams(0.1), sel)


def test_dwa_star_weights():
    g = star_graph()
    part = NodePartition(np.arange(1, 8), np.array([0]), 0)
    m = dwa_model(g, part)
    assert m.simple
    w = m.posterior_weights()
    # columns ordered as training nodes 1..7: v1 is column 0, v2 column 1
    assert abs(w[0, 0] - 1 / 2) <= 1e-12 and abs(w[0, 1] - 1 / 5) <= 1e-12
    assert np.all(w[0, 2:] == 0)
    KO, cross = dwa_output_operators(m)
    y = np.arange(1.0, 8.0)
    assert cross(KO.solve(y))[0] == pytest.approx(y[0] / 2 + y[1] / 5, abs=1e-12)
    ok, margin = gershgorin_psd_check(m)
    assert ok and margin >= 0


def test_dwa_path_middle_target():
    g = Graph.from_edges(3, [(0, 1, 2.0), (1, 2, 3.0)])
    m = dwa_model(g, NodePartition(np.array([0, 2]), np.array([1]), 0))
    # training node j contributes W_ij / deg(v_j); both training nodes are leaves
    np.testing.assert_allclose(m.posterior_weights(), [[1.0, 1.0]], rtol=1e-14)


def test_dwa_single_edge_margin_zero():
    g = Graph.from_edges(2, [(0, 1)])
    m = dwa_model(g, NodePartition(np.array([0]), np.array([1]), 0))
    ok, margin = gershgorin_psd_check(m)
    assert ok and margin == 0.0
    np.testing.assert_array_equal(dwa_covariance_dense(m), [[1, 1], [1, 1]])


def test_dwa_cross_apply_matches_dense_inverse(rng):
    g = random_graph(50, seed=11)
    perm = rng.permutation(50)
    part = NodePartition(perm[:35], perm[35:], 0)
    m = dwa_model(g, part)
    assert not m.simple
    W = g.adjacency.toarray()
    d = W.sum(1)
    t, s = part.input_nodes, part.output_nodes
    W12, W22 = W[np.ix_(t, s)], W[np.ix_(s, s)]
    M = W12 @ np.linalg.inv(np.eye(len(s)) - np.diag(1 / d[s]) @ W22)
    X = rng.standard_normal((35, 4))
    np.testing.assert_allclose(m.cross_apply(X), M.T @ X, rtol=1e-10, atol=1e-12)
    with pytest.raises(UnsupportedCaseError):
        gershgorin_psd_check(m)
    with pytest.raises(UnsupportedCaseError):
        dwa_covariance_dense(m)


def test_dwa_simple_case_reduction(rng):
    g = star_graph()
    m = dwa_model(g, NodePartition(np.arange(1, 8), np.array([0]), 0))
    X = rng.standard_normal((7, 3))
    np.testing.assert_array_equal(m.cross_apply(X), m.W21 @ X)
    np.testing.assert_array_equal(m.W21.toarray(), m.W12.T.toarray())


def test_dwa_weights_nonnegative_and_sum(rng):
    for seed in range(5):
        g = random_graph(40, seed=seed)
        perm = np.random.default_rng(seed).permutation(40)
        m = dwa_model(g, NodePartition(perm[:30], perm[30:], 0))
        w = m.posterior_weights()
        assert w.min() >= -1e-14
        if m.simple:
            W = g.adjacency.toarray()
            d = W.sum(1)
            ref = (W[np.ix_(perm[30:], perm[:30])] / d[perm[:30]][None, :]).sum(1)
            np.testing.assert_allclose(w.sum(1), ref, rtol=1e-13)


def test_dwa_degenerate_partitions():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    with pytest.raises(DegeneratePartitionError):
        dwa_model(g, NodePartition(np.array([0, 1]), np.array([1, 2, 3]), 0))
    lonely = Graph.from_edges(3, [(0, 1)], check_connected="ignore")
    with pytest.raises(DegeneratePartitionError):
        dwa_model(lonely, NodePartition(np.array([0, 1]), np.array([2]), 0))


def test_gershgorin_random_simple_cases():
    rng = np.random.default_rng(3)
    for trial in range(10):
        n = int(rng.integers(10, 200))
        g = random_graph(n, seed=100 + trial, extra=0.8)
        # greedy independent set of targets gives W22 = 0
        W = g.adjacency.tolil()
        target, blocked = [], set()
        for v in rng.permutation(n):
            if v not in blocked and len(target) < n // 4:
                target.append(int(v))
                blocked.update(W.rows[v])
                blocked.add(int(v))
        target = np.array(sorted(target))
        train = np.setdiff1d(np.arange(n), target)
        m = dwa_model(g, NodePartition(train, target, 0))
        assert m.simple
        ok, _ = gershgorin_psd_check(m)
        assert ok
        assert la.eigvalsh(dwa_covariance_dense(m)).min() >= -1e-10
