"""Immutable undirected graph storage with node features and edge splits.

The graph is kept as a symmetric directed CSR so neighbor lookups are O(1)
slices; that layout is what the PPR push and the heuristic scores iterate
over. Construction cleans the raw edge list (self-loops and duplicates are
dropped, with a counted warning) and freezes the arrays afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError

logger = logging.getLogger(__name__)

NUM_DEGREE_BUCKETS = 16


class NodeType(IntEnum):
    """Relation of a node u to a target pair (a, b)."""

    CN = 0          # neighbor of both a and b
    ONE_HOP = 1     # neighbor of exactly one of a, b
    GT_ONE_HOP = 2  # neighbor of neither


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form plus a dense node-feature matrix.

    Invariants: column indices sorted strictly ascending within each row,
    no self-loops, no duplicate edges, adjacency symmetric, and
    ``row_offsets[-1] == len(col_indices)``.
    """

    num_nodes: int
    row_offsets: np.ndarray   # int64, length num_nodes + 1
    col_indices: np.ndarray   # int64, sorted within each row
    features: np.ndarray      # float64, shape (num_nodes, d)

    def __post_init__(self):
        self.row_offsets.setflags(write=False)
        self.col_indices.setflags(write=False)
        self.features.setflags(write=False)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.col_indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def degree(self, v: int) -> int:
        return int(self.row_offsets[v + 1] - self.row_offsets[v])

    def neighbors(self, v: int) -> np.ndarray:
        """Sorted neighbor ids of v (the CSR row)."""
        if not 0 <= v < self.num_nodes:
            raise DataError(f"node id {v} out of range [0, {self.num_nodes})")
        return self.col_indices[self.row_offsets[v]:self.row_offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        i = np.searchsorted(row, v)
        return i < len(row) and row[i] == v

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as a scipy CSR matrix."""
        data = np.ones(len(self.col_indices), dtype=np.float64)
        return sp.csr_matrix(
            (data, self.col_indices.copy(), self.row_offsets.copy()),
            shape=(self.num_nodes, self.num_nodes),
        )


def neighbors(g: Graph, v: int) -> np.ndarray:
    return g.neighbors(v)


def node_type(g: Graph, a: int, b: int, u: int) -> NodeType:
    """Classify u relative to the pair (a, b). u must differ from both."""
    if u == a or u == b:
        raise DataError(f"node {u} is an endpoint of the pair ({a}, {b})")
    near_a = g.has_edge(a, u)
    near_b = g.has_edge(b, u)
    if near_a and near_b:
        return NodeType.CN
    if near_a or near_b:
        return NodeType.ONE_HOP
    return NodeType.GT_ONE_HOP


def degree_bucket_features(degrees: np.ndarray,
                           num_buckets: int = NUM_DEGREE_BUCKETS) -> np.ndarray:
    """One-hot encoding of log-spaced degree buckets, used when no feature
    file is supplied. Bucket k holds degrees in [2^k - 1, 2^(k+1) - 1)."""
    buckets = np.minimum(
        np.log2(degrees.astype(np.float64) + 1.0).astype(np.int64),
        num_buckets - 1,
    )
    x = np.zeros((len(degrees), num_buckets), dtype=np.float64)
    x[np.arange(len(degrees)), buckets] = 1.0
    return x


def from_edges(edges: np.ndarray, num_nodes: int,
               features: np.ndarray | None = None) -> Graph:
    """Build a Graph from an (m, 2) int array of endpoint pairs.

    Symmetrizes, then drops self-loops and duplicate (undirected) edges;
    both drop counts are logged when nonzero.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        bad = edges.max() if edges.max() >= num_nodes else edges.min()
        raise DataError(f"node id {bad} outside declared range [0, {num_nodes})")

    self_loops = int(np.sum(edges[:, 0] == edges[:, 1])) if len(edges) else 0
    edges = edges[edges[:, 0] != edges[:, 1]]
    canon = np.sort(edges, axis=1)
    if len(canon):
        canon = np.unique(canon, axis=0)
    duplicates = len(edges) - len(canon)
    if self_loops or duplicates:
        logger.warning("dropped %d self-loops and %d duplicate edges",
                       self_loops, duplicates)

    directed = np.concatenate([canon, canon[:, ::-1]]) if len(canon) \
        else np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[order]

    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(row_offsets, directed[:, 0] + 1, 1)
    row_offsets = np.cumsum(row_offsets)
    col_indices = np.ascontiguousarray(directed[:, 1])

    degrees = np.diff(row_offsets)
    if features is None:
        features = degree_bucket_features(degrees)
    else:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise DataError(
                f"feature matrix has {features.shape[0]} rows, expected {num_nodes}")
    return Graph(num_nodes, row_offsets, col_indices, features)


def _parse_edge_file(path: str | Path) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise DataError(f"{path}:{lineno}: expected two node ids, "
                                f"got {len(tokens)} tokens")
            try:
                pairs.append((int(tokens[0]), int(tokens[1])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric token in {tokens!r}")
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _parse_feature_file(path: str | Path) -> np.ndarray:
    try:
        feats = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric token in feature file ({exc})")
    return feats


def load_graph(edge_path: str | Path,
               feature_path: str | Path | None = None,
               num_nodes: int | None = None) -> Graph:
    """Load a graph from a whitespace-separated integer edge list.

    The declared node count comes from the feature file when given, else
    from ``num_nodes``, else from the maximum id in the edge list plus one.
    """
    edge_path = Path(edge_path)
    if not edge_path.exists():
        raise DataError(f"edge file not found: {edge_path}")
    edges = _parse_edge_file(edge_path)

    features = None
    if feature_path is not None:
        feature_path = Path(feature_path)
        if not feature_path.exists():
            raise DataError(f"feature file not found: {feature_path}")
        features = _parse_feature_file(feature_path)
        declared = features.shape[0]
        if num_nodes is not None and num_nodes != declared:
            raise DataError(f"feature file has {declared} rows but "
                            f"{num_nodes} nodes were declared")
    elif num_nodes is not None:
        declared = num_nodes
    else:
        declared = int(edges.max()) + 1 if len(edges) else 0

    return from_edges(edges, declared, features)


def write_edges(path: str | Path, edges: np.ndarray) -> None:
    """Write an (m, 2) pair array as one "u<TAB>v" line per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{u}\t{v}\n")


@dataclass
class NegativeSet:
    """Negative links for ranking evaluation.

    ``SHARED`` holds one (m, 2) list ranked against every positive;
    ``PER_POSITIVE`` holds an (num_positives, K, 2) array, row i giving the
    K corrupted pairs for positive i.
    """

    mode: str                 # "SHARED" | "PER_POSITIVE"
    pairs: np.ndarray

    def __post_init__(self):
        if self.mode not in ("SHARED", "PER_POSITIVE"):
            raise DataError(f"unknown negative mode {self.mode!r}")
        expected = 2 if self.mode == "SHARED" else 3
        if self.pairs.ndim != expected:
            raise DataError(f"{self.mode} negatives need a {expected}-d array, "
                            f"got shape {self.pairs.shape}")

    @property
    def per_positive_width(self) -> int | None:
        return self.pairs.shape[1] if self.mode == "PER_POSITIVE" else None


@dataclass
class EdgeSplit:
    """Train/valid/test positive pairs plus optional negative sets."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    valid_neg: NegativeSet | None = None
    test_neg: NegativeSet | None = None

    def __post_init__(self):
        train_set = {tuple(sorted(p)) for p in self.train.tolist()}
        test_set = {tuple(sorted(p)) for p in self.test.tolist()}
        overlap = train_set & test_set
        if overlap:
            raise DataError(f"{len(overlap)} positive pairs occur in both "
                            f"train and test (e.g. {next(iter(overlap))})")

    def positives(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def negatives(self, name: str) -> NegativeSet | None:
        return {"valid": self.valid_neg, "test": self.test_neg}.get(name)


def _parse_per_positive_file(path: Path, num_positives: int) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) % 2:
                raise DataError(f"{path}:{lineno}: odd token count, "
                                "expected pairs of node ids")
            try:
                vals = [int(t) for t in tokens]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric token")
            k = len(vals) // 2
            if width is None:
                width = k
            elif k != width:
                raise DataError(f"{path}:{lineno}: negative list width {k} "
                                f"differs from {width}")
            rows.append(np.asarray(vals, dtype=np.int64).reshape(k, 2))
    if len(rows) != num_positives:
        raise DataError(f"{path}: {len(rows)} negative rows for "
                        f"{num_positives} positives")
    return np.stack(rows) if rows else np.zeros((0, 0, 2), dtype=np.int64)


def load_split(split_dir: str | Path) -> EdgeSplit:
    """Load train.txt/valid.txt/test.txt plus optional negatives.

    Negatives are looked up as ``<name>_neg.txt``; a file of two tokens per
    line is a shared list, one of 2K tokens per line is per-positive.
    """
    split_dir = Path(split_dir)
    parts = {}
    for name in ("train", "valid", "test"):
        path = split_dir / f"{name}.txt"
        if not path.exists():
            raise DataError(f"missing split file: {path}")
        parts[name] = _parse_edge_file(path)

    negs = {}
    for name in ("valid", "test"):
        path = split_dir / f"{name}_neg.txt"
        if not path.exists():
            negs[name] = None
            continue
        with open(path, "r", encoding="utf-8") as fh:
            first = ""
            for line in fh:
                if line.split():
                    first = line
                    break
        if len(first.split()) == 2:
            negs[name] = NegativeSet("SHARED", _parse_edge_file(path))
        else:
            pairs = _parse_per_positive_file(path, len(parts[name]))
            negs[name] = NegativeSet("PER_POSITIVE", pairs)

    return EdgeSplit(parts["train"], parts["valid"], parts["test"],
                     valid_neg=negs["valid"], test_neg=negs["test"])


def load_dataset(split_dir: str | Path,
                 feature_path: str | Path | None = None,
                 num_nodes: int | None = None) -> tuple[Graph, EdgeSplit]:
    """Load a dataset directory: the graph is built from the train edges.

    When ``feature_path`` is None, a ``features.csv`` next to the splits is
    used if present, otherwise degree-bucket features are generated.
    """
    split_dir = Path(split_dir)
    split = load_split(split_dir)
    if feature_path is None:
        candidate = split_dir / "features.csv"
        feature_path = candidate if candidate.exists() else None

    if num_nodes is None and feature_path is None:
        top = 0
        for arr in (split.train, split.valid, split.test):
            if len(arr):
                top = max(top, int(arr.max()))
        for neg in (split.valid_neg, split.test_neg):
            if neg is not None and neg.pairs.size:
                top = max(top, int(neg.pairs.max()))
        num_nodes = top + 1

    features = None
    if feature_path is not None:
        features = _parse_feature_file(Path(feature_path))
        num_nodes = features.shape[0]

    g = from_edges(split.train, num_nodes, features)
    return g, split
