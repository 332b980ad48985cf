"""Shared graph generators and dataset fixtures."""

import numpy as np
import pytest

from lpform.graph import Graph, from_edges, write_edges


def random_graph(n: int, p: float, rng: np.random.Generator,
                 min_degree: int = 0,
                 feat_dim: int | None = None) -> Graph:
    """Erdos-Renyi graph; min_degree=1 chains isolated nodes to a neighbor."""
    mask = rng.random((n, n)) < p
    iu = np.triu_indices(n, k=1)
    keep = mask[iu]
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    if min_degree >= 1:
        degs = np.zeros(n, dtype=np.int64)
        for u, v in edges:
            degs[u] += 1
            degs[v] += 1
        extra = [(int(v), int((v + 1) % n)) for v in np.where(degs == 0)[0]]
        if extra:
            edges = np.concatenate([edges.reshape(-1, 2),
                                    np.asarray(extra, dtype=np.int64)])
    features = rng.normal(size=(n, feat_dim)) if feat_dim else None
    return from_edges(edges, n, features)


def connected_graph(n: int, extra_edges: int, rng: np.random.Generator,
                    feat_dim: int | None = None) -> Graph:
    """Random spanning tree plus extra edges: connected, min degree 1."""
    edges = [(int(rng.integers(i)), i) for i in range(1, n)]
    for _ in range(extra_edges):
        u, v = rng.integers(n), rng.integers(n)
        if u != v:
            edges.append((int(u), int(v)))
    features = rng.normal(size=(n, feat_dim)) if feat_dim else None
    return from_edges(np.asarray(edges, dtype=np.int64), n, features)


def path_graph(n: int, feat_dim: int | None = None,
               rng: np.random.Generator | None = None) -> Graph:
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    features = rng.normal(size=(n, feat_dim)) if feat_dim and rng else None
    return from_edges(edges, n, features)


def triangle_graph() -> Graph:
    return from_edges(np.array([[0, 1], [0, 2], [1, 2]]), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_dataset(dirpath, g: Graph, train, valid, test, test_neg=None,
                  valid_neg=None, features=True):
    """Materialize a dataset directory the loaders understand."""
    dirpath.mkdir(parents=True, exist_ok=True)
    write_edges(dirpath / "train.txt", train)
    write_edges(dirpath / "valid.txt", valid)
    write_edges(dirpath / "test.txt", test)
    if test_neg is not None:
        write_edges(dirpath / "test_neg.txt", test_neg)
    if valid_neg is not None:
        write_edges(dirpath / "valid_neg.txt", valid_neg)
    if features:
        np.savetxt(dirpath / "features.csv", g.features, delimiter=",")
    return dirpath


def make_toy_dataset(tmp_path, seed=5, n=24, p=0.18):
    """Small random dataset on disk: graph from train edges, shared
    test negatives, features file."""
    rs = np.random.default_rng(seed)
    g_full = random_graph(n, p, rs, min_degree=1, feat_dim=6)
    all_edges = []
    for v in range(g_full.num_nodes):
        for u in g_full.neighbors(v):
            if v < u:
                all_edges.append((v, int(u)))
    all_edges = np.asarray(all_edges, dtype=np.int64)
    rs.shuffle(all_edges)
    n_test = max(2, len(all_edges) // 10)
    n_valid = max(2, len(all_edges) // 10)
    test = all_edges[:n_test]
    valid = all_edges[n_test:n_test + n_valid]
    train = all_edges[n_test + n_valid:]
    g = from_edges(train, n, g_full.features)

    neg = []
    while len(neg) < 30:
        u, v = int(rs.integers(n)), int(rs.integers(n))
        if u != v and not g_full.has_edge(u, v):
            neg.append((u, v))
    d = write_dataset(tmp_path / "data", g, train, valid, test,
                      test_neg=np.asarray(neg), valid_neg=np.asarray(neg))
    return d, g, train, valid, test
