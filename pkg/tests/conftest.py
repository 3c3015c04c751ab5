import numpy as np
import pytest

from lrmogp.graph_core import Graph
from lrmogp.kernels import spd_operator


def random_graph(n, seed=0, extra=1.5, weighted=True):
    """Connected random graph: a random spanning tree plus about ``extra * n`` chords."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    edges = []
    for k in range(1, n):
        edges.append((int(perm[k]), int(perm[rng.integers(k)])))
    for _ in range(int(extra * n)):
        u, v = rng.integers(n, size=2)
        if u != v:
            edges.append((int(u), int(v)))
    ws = rng.uniform(0.5, 2.0, len(edges)) if weighted else np.ones(len(edges))
    return Graph.from_edges(n, [(u, v, float(w)) for (u, v), w in zip(edges, ws)])


def random_spd(n, seed=0, cond=1e2):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.geomspace(1.0, 1.0 / cond, n)
    return (Q * ev) @ Q.T


def random_spd_operator(n, seed=0, cond=1e2):
    return spd_operator(random_spd(n, seed, cond))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "criterion N: PASS/FAIL ..." line per acceptance check, echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
