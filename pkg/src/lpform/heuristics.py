"""Classical link-prediction scores and a generic weighted-sum evaluator.

Every heuristic here is a special case of the same node-summation form:
a per-node weight w(a, b, u) times a per-node encoding h(a, b, u), summed
over the vertex set. ``general_pairwise`` evaluates that form directly
from user-supplied (w, h) callables; the named heuristics are fast direct
implementations, and the ``*_wh`` helpers build the matching (w, h) pair
so the two routes can be checked against each other.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError
from .graph import Graph
from .ppr import PprCache, power_iteration_ppr

KATZ_BETA_DEFAULT = 0.1
KATZ_TRUNCATION_DEFAULT = 5  # beta^6 < 1e-6 at beta=0.1


class HeuristicKind(Enum):
    CN = "cn"
    AA = "aa"
    RA = "ra"
    KATZ = "katz"
    PPR = "ppr"
    FEAT_SIM = "featsim"


def common_neighbors(g: Graph, a: int, b: int) -> np.ndarray:
    """Sorted ids of the shared 1-hop neighbors of a and b."""
    return np.intersect1d(g.neighbors(a), g.neighbors(b), assume_unique=True)


def cn(g: Graph, a: int, b: int) -> float:
    """Number of common neighbors."""
    if a == b:
        raise DataError(f"cn needs two distinct endpoints, got ({a}, {b})")
    return float(len(common_neighbors(g, a, b)))


def aa(g: Graph, a: int, b: int) -> float:
    """Common neighbors weighted by reciprocal log-degree (natural log).

    Any common neighbor touches both endpoints, so its degree is >= 2 and
    the log never vanishes.
    """
    if a == b:
        raise DataError(f"aa needs two distinct endpoints, got ({a}, {b})")
    cns = common_neighbors(g, a, b)
    degs = g.degrees[cns].astype(np.float64)
    return float(np.sum(1.0 / np.log(degs))) if len(cns) else 0.0


def ra(g: Graph, a: int, b: int) -> float:
    """Common neighbors weighted by reciprocal degree."""
    if a == b:
        raise DataError(f"ra needs two distinct endpoints, got ({a}, {b})")
    cns = common_neighbors(g, a, b)
    degs = g.degrees[cns].astype(np.float64)
    return float(np.sum(1.0 / degs)) if len(cns) else 0.0


def katz(g: Graph, a: int, b: int, beta: float = KATZ_BETA_DEFAULT,
         L: int = KATZ_TRUNCATION_DEFAULT) -> float:
    """Decay-weighted count of paths between a and b up to length L.

    Computed as sum_{l=1..L} beta^l (A^l)[a, b] via repeated sparse
    matrix-vector products starting from the indicator of a.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta must lie in (0, 1), got {beta}")
    if L < 1:
        raise ConfigError(f"L must be >= 1, got {L}")
    adj = g.adjacency()
    vec = np.zeros(g.num_nodes, dtype=np.float64)
    vec[a] = 1.0
    total = 0.0
    weight = 1.0
    for _ in range(L):
        vec = adj @ vec
        weight *= beta
        total += weight * vec[b]
    return float(total)


def feat_cosine(g: Graph, a: int, b: int) -> float:
    """Cosine similarity of the two feature rows; 0 if either row is zero."""
    xa, xb = g.features[a], g.features[b]
    na, nb = np.linalg.norm(xa), np.linalg.norm(xb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(xa, xb) / (na * nb))


def ppr_score(g: Graph, a: int, b: int, cache: PprCache) -> float:
    """Symmetrized PPR heuristic: ppr(a, b) + ppr(b, a), so an undirected
    link gets one number regardless of endpoint order."""
    return cache.score(a, b) + cache.score(b, a)


def general_pairwise(g: Graph,
                     w_fn: Callable[[Graph, int, int, int], float],
                     h_fn: Callable[[Graph, int, int, int], float | np.ndarray],
                     a: int, b: int,
                     support: np.ndarray | None = None) -> np.ndarray:
    """Evaluate sum_u w(a, b, u) * h(a, b, u) over the vertex set.

    When ``support`` is given, only those nodes are visited; they must
    cover every u with nonzero weight. Scalar h values yield a 0-d array.
    """
    nodes = np.arange(g.num_nodes) if support is None else np.asarray(support)
    total = None
    for u in nodes:
        w = w_fn(g, a, b, int(u))
        if w == 0.0:
            continue
        h = np.asarray(h_fn(g, a, b, int(u)), dtype=np.float64)
        term = w * h
        if total is None:
            total = term.astype(np.float64)
        elif total.shape != term.shape:
            raise ConfigError(f"encoding shapes disagree: {total.shape} "
                              f"vs {term.shape}")
        else:
            total = total + term
    if total is None:
        total = np.asarray(0.0)
    return total


# (w, h) pairs reproducing each named heuristic through general_pairwise.

def _cn_indicator(g: Graph, a: int, b: int, u: int) -> float:
    return 1.0 if (g.has_edge(a, u) and g.has_edge(b, u)) else 0.0


def cn_wh():
    return _cn_indicator, (lambda g, a, b, u: 1.0)


def aa_wh():
    return _cn_indicator, (lambda g, a, b, u: 1.0 / np.log(float(g.degree(u))))


def ra_wh():
    return _cn_indicator, (lambda g, a, b, u: 1.0 / float(g.degree(u)))


def _endpoint_indicator(g: Graph, a: int, b: int, u: int) -> np.ndarray:
    """One-hot row for b when u == b, else zero: restricts the summation to
    the endpoint term so path- and feature-based scores land at index b."""
    out = np.zeros(g.num_nodes, dtype=np.float64)
    if u == b:
        out[b] = 1.0
    return out


def katz_wh(beta: float = KATZ_BETA_DEFAULT,
            L: int = KATZ_TRUNCATION_DEFAULT):
    """Weight = truncated decay-weighted path counts from a, computed on a
    dense adjacency so the route is independent of the sparse one."""

    def w_fn(g: Graph, a: int, b: int, u: int) -> float:
        dense = g.adjacency().toarray()
        vec = np.zeros(g.num_nodes)
        vec[a] = 1.0
        total = np.zeros(g.num_nodes)
        weight = 1.0
        for _ in range(L):
            vec = dense.T @ vec
            weight *= beta
            total += weight * vec
        return float(total[u])

    return w_fn, _endpoint_indicator


def ppr_wh(alpha: float, iters: int = 200):
    """Weight = one-sided PPR from a (geometric walk sum, truncated)."""

    def w_fn(g: Graph, a: int, b: int, u: int) -> float:
        return float(power_iteration_ppr(g, a, alpha, iters)[u])

    return w_fn, _endpoint_indicator


def featsim_wh():
    def w_fn(g: Graph, a: int, b: int, u: int) -> float:
        return feat_cosine(g, a, u)

    return w_fn, _endpoint_indicator


def heuristic_fn(kind: HeuristicKind, g: Graph,
                 cache: PprCache | None = None,
                 beta: float = KATZ_BETA_DEFAULT,
                 L: int = KATZ_TRUNCATION_DEFAULT):
    """Vectorize a heuristic into a score function over an (m, 2) link array,
    the shape the ranking evaluator consumes."""
    if kind in (HeuristicKind.PPR,) and cache is None:
        raise ConfigError("the ppr heuristic needs a precomputed cache")

    def one(a: int, b: int) -> float:
        if kind == HeuristicKind.CN:
            return cn(g, a, b)
        if kind == HeuristicKind.AA:
            return aa(g, a, b)
        if kind == HeuristicKind.RA:
            return ra(g, a, b)
        if kind == HeuristicKind.KATZ:
            return katz(g, a, b, beta, L)
        if kind == HeuristicKind.PPR:
            return ppr_score(g, a, b, cache)
        return feat_cosine(g, a, b)

    def score(links: np.ndarray) -> np.ndarray:
        links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
        return np.array([one(int(a), int(b)) for a, b in links],
                        dtype=np.float64)

    return score
