import itertools

import numpy as np
import pytest

from dynwalk.graph_store import GraphSnapshot, NodeIndex


def random_graph(rng, n, p_edge, *, interner=None, directed=False, weighted=True, timestamp=1,
                 labels=None, isolated=0):
    """Erdos-Renyi style snapshot over labels ``labels[0..n-1]`` (default ``n0..``)."""
    labels = labels or [f"n{i}" for i in range(n)]
    pairs = itertools.permutations(range(n), 2) if directed else itertools.combinations(range(n), 2)
    edges = []
    for u, v in pairs:
        if rng.random() < p_edge:
            w = float(rng.choice([0.5, 1.0, 2.0, 3.0])) if weighted else 1.0
            edges.append((labels[u], labels[v], w))
    extra = [labels[i] for i in rng.choice(n, size=min(isolated, n), replace=False)] if isolated else []
    return GraphSnapshot.from_edges(edges, timestamp=timestamp, directed=directed,
                                    interner=interner if interner is not None else NodeIndex(), nodes=extra)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
