import logging

import numpy as np
import pytest

from lpform.errors import DataError
from lpform.graph import (EdgeSplit, NegativeSet, NodeType,
                          degree_bucket_features, from_edges, load_dataset,
                          load_graph, load_split, node_type, write_edges)

from conftest import path_graph, random_graph, triangle_graph


def test_path_graph_degrees():
    g = from_edges(np.array([[0, 1], [1, 2]]), 3)
    assert list(g.degrees) == [1, 2, 1]
    assert g.num_edges == 2


def test_duplicate_and_self_loop_cleaning(caplog):
    with caplog.at_level(logging.WARNING):
        g = from_edges(np.array([[0, 1], [1, 0], [2, 2]]), 3)
    assert g.num_edges == 1
    assert g.has_edge(0, 1) and g.has_edge(1, 0)
    assert "1 self-loops and 1 duplicate edges" in caplog.text


def test_csr_invariants(rng):
    g = random_graph(40, 0.2, rng)
    assert g.row_offsets[0] == 0
    assert g.row_offsets[-1] == len(g.col_indices)
    assert np.all(np.diff(g.row_offsets) >= 0)
    for v in range(g.num_nodes):
        row = g.neighbors(v)
        assert np.all(np.diff(row) > 0)          # strictly ascending
        assert v not in row                      # no self-loops
        for u in row:
            assert g.has_edge(int(u), v)         # symmetric


def test_degree_sum_is_twice_edge_count(rng):
    for _ in range(10):
        g = random_graph(int(rng.integers(2, 50)), rng.uniform(0.05, 0.5), rng)
        assert g.degrees.sum() == 2 * g.num_edges


def test_neighbors_path_and_isolated():
    g = path_graph(3)
    assert list(g.neighbors(1)) == [0, 2]
    g2 = from_edges(np.array([[0, 1]]), 3)
    assert list(g2.neighbors(2)) == []


def test_neighbors_against_dense_oracle(rng):
    g = random_graph(30, 0.25, rng)
    dense = g.adjacency().toarray()
    for v in range(g.num_nodes):
        assert list(g.neighbors(v)) == list(np.nonzero(dense[v])[0])


def test_neighbors_out_of_range():
    g = path_graph(3)
    with pytest.raises(DataError):
        g.neighbors(3)


def test_node_type_examples():
    tri = triangle_graph()
    assert node_type(tri, 0, 1, 2) == NodeType.CN

    # a - c - d - b: c touches only a
    g = from_edges(np.array([[0, 2], [2, 3], [3, 1]]), 4)
    assert node_type(g, 0, 1, 2) == NodeType.ONE_HOP

    # a - x - y - z - b: y touches neither endpoint
    g = from_edges(np.array([[0, 2], [2, 3], [3, 4], [4, 1]]), 5)
    assert node_type(g, 0, 1, 3) == NodeType.GT_ONE_HOP


def test_node_type_rejects_endpoints():
    g = triangle_graph()
    with pytest.raises(DataError):
        node_type(g, 0, 1, 0)


def test_node_type_partitions_vertices(rng):
    for _ in range(5):
        g = random_graph(int(rng.integers(5, 50)), 0.2, rng)
        a, b = 0, 1
        na = set(int(x) for x in g.neighbors(a))
        nb = set(int(x) for x in g.neighbors(b))
        for u in range(g.num_nodes):
            if u in (a, b):
                continue
            t = node_type(g, a, b, u)
            expected = (NodeType.CN if u in na and u in nb
                        else NodeType.ONE_HOP if u in na or u in nb
                        else NodeType.GT_ONE_HOP)
            assert t == expected


def test_degree_bucket_features():
    x = degree_bucket_features(np.array([0, 1, 2, 3, 1000000]))
    assert x.shape == (5, 16)
    assert np.all(x.sum(axis=1) == 1.0)
    assert x[0, 0] == 1.0   # degree 0
    assert x[1, 1] == 1.0   # degree 1
    assert x[2, 1] == 1.0   # degree 2
    assert x[3, 2] == 1.0   # degree 3
    assert x[4, 15] == 1.0  # clamped to the last bucket


def test_default_features_are_degree_buckets():
    g = path_graph(3)
    assert g.features.shape == (3, 16)
    assert g.features[1, 1] == 1.0  # degree 2 lands in bucket 1


def test_graph_arrays_immutable():
    g = path_graph(3)
    with pytest.raises(ValueError):
        g.col_indices[0] = 5


def test_node_id_out_of_declared_range():
    with pytest.raises(DataError, match="outside declared range"):
        from_edges(np.array([[0, 7]]), 3)


def test_load_graph_roundtrip(tmp_path, rng):
    g = random_graph(12, 0.3, rng, feat_dim=4)
    edges = [(v, int(u)) for v in range(12) for u in g.neighbors(v) if v < u]
    write_edges(tmp_path / "edges.tsv", np.asarray(edges))
    np.savetxt(tmp_path / "features.csv", g.features, delimiter=",")
    loaded = load_graph(tmp_path / "edges.tsv", tmp_path / "features.csv")
    assert loaded.num_nodes == 12
    assert np.array_equal(loaded.col_indices, g.col_indices)
    assert np.allclose(loaded.features, g.features)


def test_load_graph_errors(tmp_path):
    edge = tmp_path / "edges.tsv"
    edge.write_text("0\t1\n1\tx\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_graph(edge)

    edge.write_text("0\t1\n")
    feats = tmp_path / "feats.csv"
    feats.write_text("0.5,1.0\n")  # one row for two nodes
    with pytest.raises(DataError):
        load_graph(edge, feats)

    edge.write_text("0\t5\n")
    with pytest.raises(DataError, match="outside declared range"):
        load_graph(edge, num_nodes=3)

    with pytest.raises(DataError, match="not found"):
        load_graph(tmp_path / "missing.tsv")

    edge.write_text("0 1 2\n")
    with pytest.raises(DataError, match="two node ids"):
        load_graph(edge)


def test_split_overlap_rejected():
    train = np.array([[0, 1], [1, 2]])
    test = np.array([[2, 1]])  # (1,2) again, reversed
    with pytest.raises(DataError, match="train and test"):
        EdgeSplit(train, np.zeros((0, 2), dtype=np.int64), test)


def test_negative_set_validation():
    with pytest.raises(DataError):
        NegativeSet("SHARED", np.zeros((3, 4, 2), dtype=np.int64))
    with pytest.raises(DataError):
        NegativeSet("WEIRD", np.zeros((3, 2), dtype=np.int64))
    per = NegativeSet("PER_POSITIVE", np.zeros((3, 7, 2), dtype=np.int64))
    assert per.per_positive_width == 7


def test_load_split_shared_and_per_positive(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    write_edges(d / "train.txt", np.array([[0, 1], [1, 2]]))
    write_edges(d / "valid.txt", np.array([[2, 3]]))
    write_edges(d / "test.txt", np.array([[3, 4], [0, 4]]))
    write_edges(d / "test_neg.txt", np.array([[0, 3], [1, 4]]))
    split = load_split(d)
    assert split.test_neg.mode == "SHARED"
    assert split.valid_neg is None

    # two negatives per positive: 4 ints per line
    (d / "test_neg.txt").write_text("0 3 1 4\n2 4 0 2\n")
    split = load_split(d)
    assert split.test_neg.mode == "PER_POSITIVE"
    assert split.test_neg.pairs.shape == (2, 2, 2)

    (d / "test_neg.txt").write_text("0 3 1 4\n2 4\n")
    with pytest.raises(DataError, match="width"):
        load_split(d)


def test_load_dataset_builds_graph_from_train(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    write_edges(d / "train.txt", np.array([[0, 1], [1, 2]]))
    write_edges(d / "valid.txt", np.array([[0, 2]]))
    write_edges(d / "test.txt", np.array([[2, 3]]))
    g, split = load_dataset(d)
    assert g.num_nodes == 4  # max id across splits
    assert g.num_edges == 2  # train edges only
    assert len(split.test) == 1
