"""Assign links to a single dominant formation factor and report per-factor
ranking metrics.

Three proxy scores stand in for the factors: common-neighbor count for
local structure, the symmetrized PPR score for global structure, and
feature cosine similarity for feature proximity. A link lands in a factor
group only when its score clears that factor's percentile threshold while
both other scores fall strictly below theirs; otherwise it stays
unassigned.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError
from .graph import Graph, NegativeSet
from .heuristics import cn, feat_cosine, ppr_score
from .ppr import PprCache
from .ranking import DEFAULT_KS, RankingReport, ranking_report

PERCENTILE_DEFAULT = 90.0  # 80 spreads groups more evenly on collab-like graphs


class Factor(Enum):
    LOCAL = "local"      # common-neighbor proxy
    GLOBAL = "global"    # PPR proxy
    FEATURE = "feature"  # feature-similarity proxy
    NONE = "none"        # zero or several dominant factors


@dataclass
class FactorAssignment:
    link: tuple[int, int]
    factor: Factor
    scores: tuple[float, float, float]      # (cn, ppr, featsim)
    thresholds: tuple[float, float, float]  # matching percentile cutoffs


def nearest_rank_percentile(scores: np.ndarray, p: float) -> float:
    """p-th percentile by nearest rank on the sorted list: the smallest
    value with at least p percent of the scores at or below it. Integer
    scores stay integers; nothing is interpolated."""
    if not 0.0 < p < 100.0:
        raise ConfigError(f"percentile must lie in (0, 100), got {p}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DataError("cannot take a percentile of an empty score list")
    ordered = np.sort(scores)
    rank = max(int(np.ceil(p / 100.0 * len(ordered))), 1)
    return float(ordered[rank - 1])


def factor_scores(g: Graph, cache: PprCache,
                  links: np.ndarray) -> np.ndarray:
    """(m, 3) array of (cn, ppr, featsim) proxy scores per link."""
    links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    out = np.zeros((len(links), 3), dtype=np.float64)
    for i, (a, b) in enumerate(links):
        a, b = int(a), int(b)
        out[i, 0] = cn(g, a, b)
        out[i, 1] = ppr_score(g, a, b, cache)
        out[i, 2] = feat_cosine(g, a, b)
    return out


def percentile_thresholds(scores: np.ndarray,
                          p: float = PERCENTILE_DEFAULT
                          ) -> tuple[float, float, float]:
    """Per-factor nearest-rank thresholds over the link population."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 3)
    return tuple(nearest_rank_percentile(scores[:, j], p) for j in range(3))


def assign_factors(g: Graph, cache: PprCache, links: np.ndarray,
                   p: float = PERCENTILE_DEFAULT) -> list[FactorAssignment]:
    """Assign each link its single dominant factor, or NONE.

    The dominant factor's score must be >= its threshold while both other
    scores are strictly below theirs; thresholds come from the same link
    population the assignment runs on.
    """
    links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    scores = factor_scores(g, cache, links)
    t_cn, t_ppr, t_fs = percentile_thresholds(scores, p)
    out = []
    for (a, b), (s_cn, s_ppr, s_fs) in zip(links, scores):
        if s_cn >= t_cn and s_fs < t_fs and s_ppr < t_ppr:
            factor = Factor.LOCAL
        elif s_cn < t_cn and s_fs >= t_fs and s_ppr < t_ppr:
            factor = Factor.FEATURE
        elif s_cn < t_cn and s_fs < t_fs and s_ppr >= t_ppr:
            factor = Factor.GLOBAL
        else:
            factor = Factor.NONE
        out.append(FactorAssignment((int(a), int(b)), factor,
                                    (float(s_cn), float(s_ppr), float(s_fs)),
                                    (t_cn, t_ppr, t_fs)))
    return out


def per_factor_report(assignments: list[FactorAssignment],
                      pos_scores: np.ndarray, neg_scores: np.ndarray,
                      ks=DEFAULT_KS, mode: str = "SHARED"
                      ) -> dict[Factor, RankingReport]:
    """Ranking report restricted to each factor group.

    ``pos_scores`` aligns with ``assignments``; ``neg_scores`` is the
    shared list or the per-positive matrix from the full evaluation. An
    empty group yields a report flagged empty rather than an error.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    if len(pos_scores) != len(assignments):
        raise DataError(f"{len(pos_scores)} scores for "
                        f"{len(assignments)} assignments")
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    reports = {}
    for factor in (Factor.LOCAL, Factor.GLOBAL, Factor.FEATURE):
        idx = np.array([i for i, a in enumerate(assignments)
                        if a.factor == factor], dtype=np.int64)
        negs = neg_scores if neg_scores.ndim == 1 else neg_scores[idx]
        reports[factor] = ranking_report(pos_scores[idx], negs, ks, mode)
    return reports
