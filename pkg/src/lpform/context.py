"""Per-link attended node sets via per-type PPR thresholding.

For a target pair (a, b), every other node is typed as common neighbor,
1-hop, or >1-hop, and kept only if its PPR scores from both endpoints
clear that type's threshold. Candidates are enumerated from the union of
the two sparse PPR rows and both 1-hop neighborhoods; anything outside
that union reads as PPR zero from at least one side and cannot pass a
positive threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graph import Graph, NodeType
from .ppr import PprCache


@dataclass(frozen=True)
class Thresholds:
    """Per-type PPR cutoffs. Common neighbors default to 0 (keep them all);
    the other two defaults follow the values that work well in practice."""

    cn: float = 0.0
    one_hop: float = 1e-4
    gt_one_hop: float = 1e-2

    def __post_init__(self):
        if min(self.cn, self.one_hop, self.gt_one_hop) < 0:
            raise ConfigError("thresholds must be non-negative")

    def for_type(self, t: NodeType) -> float:
        if t == NodeType.CN:
            return self.cn
        if t == NodeType.ONE_HOP:
            return self.one_hop
        return self.gt_one_hop


@dataclass
class ContextSet:
    """Filtered attended nodes for one target link.

    ``nodes`` rows are (node id, type, ppr from a, ppr from b), ordered by
    type (CN, 1-hop, >1-hop) and ascending id within type. ``counts`` are
    the per-type cardinalities in the same order.
    """

    link: tuple[int, int]
    node_ids: np.ndarray    # int64 [m]
    node_types: np.ndarray  # int64 [m], NodeType values
    ppr_a: np.ndarray       # float64 [m]
    ppr_b: np.ndarray       # float64 [m]
    counts: tuple[int, int, int]

    @property
    def size(self) -> int:
        return len(self.node_ids)

    def nodes(self):
        """Iterate (node id, NodeType, ppr_au, ppr_bu) tuples."""
        for i in range(self.size):
            yield (int(self.node_ids[i]), NodeType(self.node_types[i]),
                   float(self.ppr_a[i]), float(self.ppr_b[i]))


def select_context(g: Graph, cache: PprCache, a: int, b: int,
                   thresholds: Thresholds = Thresholds(),
                   ppr_filter: str = "and",
                   max_context: int | None = None) -> ContextSet:
    """Build the attended node set for the pair (a, b).

    ``ppr_filter`` "and" keeps u when both ppr(a, u) and ppr(b, u) exceed
    the type threshold; "or" is an escape hatch requiring only one side.
    ``max_context`` caps the set to the nodes with the largest
    ppr(a, u) + ppr(b, u), which bounds attention cost on degenerate hubs.
    """
    if ppr_filter not in ("and", "or"):
        raise ConfigError(f"ppr_filter must be 'and' or 'or', got {ppr_filter!r}")
    if not (0 <= a < cache.num_nodes and 0 <= b < cache.num_nodes):
        raise DataError(f"pair ({a}, {b}) not covered by the cache")
    row_a = cache.row(a).entries
    row_b = cache.row(b).entries

    candidates = set(row_a)
    candidates.update(row_b)
    candidates.update(int(v) for v in g.neighbors(a))
    candidates.update(int(v) for v in g.neighbors(b))
    candidates.discard(a)
    candidates.discard(b)

    kept: list[tuple[int, int, float, float]] = []
    na = g.neighbors(a)
    nb = g.neighbors(b)
    na_set = set(int(v) for v in na)
    nb_set = set(int(v) for v in nb)
    for u in candidates:
        in_a = u in na_set
        in_b = u in nb_set
        if in_a and in_b:
            t = NodeType.CN
        elif in_a or in_b:
            t = NodeType.ONE_HOP
        else:
            t = NodeType.GT_ONE_HOP
        eta = thresholds.for_type(t)
        pa = row_a.get(u, 0.0)
        pb = row_b.get(u, 0.0)
        if ppr_filter == "and":
            keep = pa > eta and pb > eta
        else:
            keep = pa > eta or pb > eta
        if keep:
            kept.append((u, int(t), pa, pb))

    kept.sort(key=lambda rec: (rec[1], rec[0]))
    if max_context is not None and len(kept) > max_context:
        # keep the strongest combined-PPR nodes, then restore the ordering
        kept.sort(key=lambda rec: (-(rec[2] + rec[3]), rec[0]))
        kept = kept[:max_context]
        kept.sort(key=lambda rec: (rec[1], rec[0]))

    ids = np.array([r[0] for r in kept], dtype=np.int64)
    types = np.array([r[1] for r in kept], dtype=np.int64)
    pa = np.array([r[2] for r in kept], dtype=np.float64)
    pb = np.array([r[3] for r in kept], dtype=np.float64)
    counts = (int(np.sum(types == NodeType.CN)),
              int(np.sum(types == NodeType.ONE_HOP)),
              int(np.sum(types == NodeType.GT_ONE_HOP)))
    return ContextSet((a, b), ids, types, pa, pb, counts)


def context_batch(g: Graph, cache: PprCache, links: np.ndarray,
                  thresholds: Thresholds = Thresholds(),
                  ppr_filter: str = "and",
                  max_context: int | None = None) -> list[ContextSet]:
    """Element-wise select_context over an (m, 2) link array."""
    links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    return [select_context(g, cache, int(a), int(b), thresholds,
                           ppr_filter, max_context)
            for a, b in links]


def swap_endpoints(ctx: ContextSet) -> ContextSet:
    """The same context viewed from (b, a): PPR columns swap, membership
    and counts are unchanged."""
    return ContextSet((ctx.link[1], ctx.link[0]), ctx.node_ids,
                      ctx.node_types, ctx.ppr_b, ctx.ppr_a, ctx.counts)
