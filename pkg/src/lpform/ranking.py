"""Ranking evaluation: MRR and Hits@K of positives against negatives.

Ranks are pessimistic: a positive tied with negatives is placed below all
of them, so rank = 1 + #{negatives scored higher} + #{negatives tied}.
Heuristic and model scorers share this path; anything that maps an
(m, 2) link array to scores can be evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError
from .graph import NegativeSet

DEFAULT_KS = (1, 3, 10, 50, 100)


@dataclass
class RankingReport:
    mrr: float
    hits: dict[int, float]
    num_positives: int
    num_negatives: int
    negative_mode: str            # "SHARED" | "PER_POSITIVE"
    empty: bool = False           # no positives in the evaluated group

    def to_dict(self) -> dict:
        return {"mrr": self.mrr,
                "hits": {str(k): v for k, v in self.hits.items()},
                "num_positives": self.num_positives,
                "num_negatives": self.num_negatives,
                "negative_mode": self.negative_mode,
                "empty": self.empty}


def pessimistic_ranks(pos_scores: np.ndarray,
                      neg_scores: np.ndarray) -> np.ndarray:
    """Rank of each positive among its negatives, ties counted against it.

    ``neg_scores`` is either one shared 1-d array or a per-positive 2-d
    array with one row per positive.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if neg_scores.ndim == 1:
        ordered = np.sort(neg_scores)
        n = len(ordered)
        above = n - np.searchsorted(ordered, pos_scores, side="right")
        tied = (np.searchsorted(ordered, pos_scores, side="right")
                - np.searchsorted(ordered, pos_scores, side="left"))
        return 1 + above + tied
    if neg_scores.shape[0] != len(pos_scores):
        raise DataError(f"{neg_scores.shape[0]} negative rows for "
                        f"{len(pos_scores)} positives")
    above = (neg_scores > pos_scores[:, None]).sum(axis=1)
    tied = (neg_scores == pos_scores[:, None]).sum(axis=1)
    return 1 + above + tied


def ranking_report(pos_scores: np.ndarray, neg_scores: np.ndarray,
                   ks=DEFAULT_KS, mode: str = "SHARED") -> RankingReport:
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise ConfigError(f"hits cutoffs must be >= 1, got {ks}")
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    num_neg = neg_scores.shape[-1]
    if len(pos_scores) == 0:
        return RankingReport(0.0, {k: 0.0 for k in ks}, 0, num_neg, mode,
                             empty=True)
    ranks = pessimistic_ranks(pos_scores, neg_scores)
    mrr = float(np.mean(1.0 / ranks))
    hits = {k: float(np.mean(ranks <= k)) for k in ks}
    return RankingReport(mrr, hits, len(pos_scores), num_neg, mode)


def evaluate(score_fn: Callable[[np.ndarray], np.ndarray],
             positives: np.ndarray, negatives: NegativeSet,
             ks=DEFAULT_KS) -> RankingReport:
    """Score positives and negatives with the same function and rank.

    SHARED mode ranks every positive against the one negative list;
    PER_POSITIVE ranks row i of the negatives against positive i.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if negatives.mode == "PER_POSITIVE" \
            and negatives.pairs.shape[0] != len(positives):
        raise DataError(f"per-positive negatives have "
                        f"{negatives.pairs.shape[0]} rows for "
                        f"{len(positives)} positives")
    pos_scores = np.asarray(score_fn(positives), dtype=np.float64)
    if negatives.mode == "SHARED":
        neg_scores = np.asarray(score_fn(negatives.pairs), dtype=np.float64)
    else:
        m, k = negatives.pairs.shape[0], negatives.pairs.shape[1]
        flat = negatives.pairs.reshape(-1, 2)
        neg_scores = np.asarray(score_fn(flat),
                                dtype=np.float64).reshape(m, k)
    return ranking_report(pos_scores, neg_scores, ks, negatives.mode)
