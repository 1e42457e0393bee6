import itertools

import numpy as np
import pytest

from ccc.graph import GraphSnapshot


def path_graph(n, t=0, start=1, dim=2):
    ids = list(range(start, start + n))
    return GraphSnapshot.create(t, ids, np.ones((n, dim)), [0] * n, zip(ids, ids[1:]))


def random_snapshot(rng, n, p=0.2, t=0, dim=3, id_pool=None):
    ids = sorted(rng.choice(id_pool, size=n, replace=False).tolist()) if id_pool is not None else list(range(n))
    edges = [(u, v) for u, v in itertools.combinations(ids, 2) if rng.random() < p]
    return GraphSnapshot.create(t, ids, rng.normal(size=(n, dim)), rng.integers(0, 3, size=n).tolist(), edges)


def floyd_warshall(g: GraphSnapshot) -> np.ndarray:
    """All-pairs hop distances (inf when disconnected), indexed like ``g.node_ids``."""
    n = g.num_nodes
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    pos = g.index
    for u, v in g.edges:
        d[pos[u], pos[v]] = d[pos[v], pos[u]] = 1
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


def brute_region(g, seeds, k):
    if not seeds:
        return frozenset()
    d = floyd_warshall(g)
    cols = [g.index[s] for s in seeds]
    near = d[:, cols].min(axis=1) <= k
    return frozenset(v for v, ok in zip(g.node_ids, near) if ok)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
