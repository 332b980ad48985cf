"""Training loop with per-epoch negative resampling and early stopping.

Negatives corrupt one endpoint of a positive uniformly, rejecting pairs
that exist as edges; each epoch draws a fresh set from a seed derived
from (run seed, epoch), so identical seeds give identical loss curves.
Validation MRR is tracked every epoch and the best checkpoint wins.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .context import select_context
from .errors import ConfigError, DataError, NumericError
from .graph import EdgeSplit, Graph, NegativeSet
from .model import (Model, ModelConfig, batch_from_contexts, encode_nodes,
                    normalized_adjacency, predict_links, prepare_batch,
                    score_links)
from .ppr import PprCache, precompute_cache
from .ranking import DEFAULT_KS, RankingReport, evaluate

logger = logging.getLogger(__name__)

_SAMPLER_MAX_TRIES = 200


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 1.0            # per-epoch learning-rate multiplier
    weight_decay: float = 0.0
    dropout: float = 0.0          # mirrored into the model config by the CLI
    epochs: int = 100
    patience: int = 20
    neg_ratio: int = 1
    batch_size: int = 0           # 0 = full batch
    seed: int = 0
    dtype: str = "float32"        # float64 for verification runs
    eval_negatives: int = 100     # sampled when the split ships none

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got "
                              f"{self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.neg_ratio < 1:
            raise ConfigError(f"neg_ratio must be >= 1, got {self.neg_ratio}")
        if self.batch_size < 0:
            raise ConfigError(f"batch_size must be >= 0, got "
                              f"{self.batch_size}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got "
                              f"{self.dtype!r}")
        if self.eval_negatives < 1:
            raise ConfigError(f"eval_negatives must be >= 1, got "
                              f"{self.eval_negatives}")


def sample_negatives(g: Graph, positives: np.ndarray, ratio: int,
                     seed) -> np.ndarray:
    """Corrupt one endpoint of each positive, ``ratio`` times, rejecting
    existing edges and self-pairs. Deterministic for a given seed; raises
    after bounded retries when the graph is too dense to corrupt."""
    if ratio < 1:
        raise ConfigError(f"ratio must be >= 1, got {ratio}")
    rng = np.random.default_rng(seed)
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    out = np.empty((len(positives) * ratio, 2), dtype=np.int64)
    i = 0
    for a, b in positives:
        for _ in range(ratio):
            for _ in range(_SAMPLER_MAX_TRIES):
                keep_a = rng.random() < 0.5
                node = int(rng.integers(g.num_nodes))
                cand = (int(a), node) if keep_a else (node, int(b))
                if cand[0] != cand[1] and not g.has_edge(cand[0], cand[1]):
                    out[i] = cand
                    i += 1
                    break
            else:
                raise NumericError(
                    f"negative sampling stalled after {_SAMPLER_MAX_TRIES} "
                    f"tries corrupting ({a}, {b}); graph too dense")
    return out


@dataclass
class TrainResult:
    model: Model
    cache: PprCache
    metrics: list[dict]           # per-epoch: epoch, loss, val_mrr
    best_epoch: int
    best_val_mrr: float
    valid_report: RankingReport | None = None


def _valid_negatives(g: Graph, split: EdgeSplit,
                     cfg: TrainConfig) -> NegativeSet:
    """Shared validation negatives: the split's own when present, else a
    fixed list of non-edges drawn once up front."""
    if split.valid_neg is not None:
        return split.valid_neg
    rng = np.random.default_rng((cfg.seed, 0xE7A1))
    pairs = []
    tries = 0
    while len(pairs) < cfg.eval_negatives:
        u = int(rng.integers(g.num_nodes))
        v = int(rng.integers(g.num_nodes))
        tries += 1
        if tries > cfg.eval_negatives * _SAMPLER_MAX_TRIES:
            raise NumericError("validation negative sampling stalled")
        if u != v and not g.has_edge(u, v):
            pairs.append((u, v))
    return NegativeSet("SHARED", np.asarray(pairs, dtype=np.int64))


def train(g: Graph, split: EdgeSplit, model_cfg: ModelConfig,
          train_cfg: TrainConfig, cache: PprCache | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Fit the model on the split's train positives.

    Per epoch: resample 1:ratio negatives, minimize binary cross-entropy
    with Adam (decoupled weight decay), decay the learning rate, measure
    validation MRR, keep the best parameters, and stop early after
    ``patience`` epochs without improvement. A non-finite loss aborts.
    """
    model_cfg.validate()
    train_cfg.validate()
    if len(split.train) == 0:
        raise DataError("empty training split")
    dtype = np.float32 if train_cfg.dtype == "float32" else np.float64
    if cache is None:
        cache = precompute_cache(g, model_cfg.ppr_alpha, model_cfg.ppr_eps)

    model = Model(model_cfg, g.features.shape[1], seed=train_cfg.seed,
                  dtype=dtype)
    rng = np.random.default_rng((train_cfg.seed, 0xD0))
    adj_full = normalized_adjacency(g)
    positives = np.sort(np.asarray(split.train, dtype=np.int64), axis=1)
    valid_neg = _valid_negatives(g, split, train_cfg) if len(split.valid) \
        else None

    # positive-link contexts are fixed across epochs; build each only once
    ctx_cache: dict[tuple[int, int], object] = {}

    def batch_for(links: np.ndarray):
        contexts = []
        for a, b in links:
            key = (int(a), int(b))
            if key not in ctx_cache:
                ctx_cache[key] = select_context(
                    g, cache, key[0], key[1], model_cfg.thresholds,
                    model_cfg.ppr_filter, model_cfg.max_context)
            contexts.append(ctx_cache[key])
        return batch_from_contexts(links, contexts)

    lr = train_cfg.lr
    best_val = -np.inf
    best_epoch = 0
    best_params = model.store.copy_values()
    stale = 0
    metrics: list[dict] = []

    for epoch in range(1, train_cfg.epochs + 1):
        negatives = sample_negatives(g, positives, train_cfg.neg_ratio,
                                     (train_cfg.seed, epoch))
        order = rng.permutation(len(positives))
        step = train_cfg.batch_size or len(positives)
        epoch_loss = 0.0
        seen = 0
        ratio = train_cfg.neg_ratio
        for lo in range(0, len(positives), step):
            chunk_idx = order[lo:lo + step]
            pos_chunk = positives[chunk_idx]
            neg_idx = (chunk_idx[:, None] * ratio
                       + np.arange(ratio)[None, :]).ravel()
            neg_chunk = negatives[neg_idx]
            labels = np.concatenate([np.ones(len(pos_chunk)),
                                     np.zeros(len(neg_chunk))])

            adj = normalized_adjacency(g, drop_edges=pos_chunk) \
                if model_cfg.mask_target else adj_full
            h_tensor = encode_nodes(g, model, training=True, rng=rng,
                                    adj=adj)
            pos_batch = batch_for(pos_chunk)
            neg_batch = prepare_batch(g, cache, neg_chunk, model_cfg)
            probs_pos = score_links(g, model, h_tensor, pos_batch,
                                    training=True, rng=rng)
            probs_neg = score_links(g, model, h_tensor, neg_batch,
                                    training=True, rng=rng)
            probs = ad.concat([probs_pos, probs_neg], axis=0)
            loss = ad.bce_loss(probs, labels.astype(model.dtype))
            loss_val = float(loss.values)
            if not np.isfinite(loss_val):
                raise NumericError(f"loss became non-finite at epoch {epoch} "
                                   f"(lr={lr:.3g}); aborting")
            model.store.zero_grad()
            loss.backward()
            ad.adam_step(model.store, lr,
                         weight_decay=train_cfg.weight_decay)
            epoch_loss += loss_val * len(labels)
            seen += len(labels)
        epoch_loss /= max(seen, 1)

        val_mrr = float("nan")
        if valid_neg is not None:
            report = evaluate(
                lambda links: predict_links(g, model, cache, links,
                                            adj=adj_full),
                split.valid, valid_neg, ks=(1, 3, 10))
            val_mrr = report.mrr
            if val_mrr > best_val:
                best_val = val_mrr
                best_epoch = epoch
                best_params = model.store.copy_values()
                stale = 0
            else:
                stale += 1
        else:
            # no validation split: the last epoch is the checkpoint
            best_epoch = epoch
            best_params = model.store.copy_values()
        metrics.append({"epoch": epoch, "loss": epoch_loss,
                        "val_mrr": val_mrr})
        logger.info("epoch %d loss %.5f val_mrr %s", epoch, epoch_loss,
                    f"{val_mrr:.4f}" if np.isfinite(val_mrr) else "n/a")
        if valid_neg is not None and stale >= train_cfg.patience:
            logger.info("early stop at epoch %d (no improvement for %d)",
                        epoch, stale)
            break
        lr *= train_cfg.decay

    model.store.load_values(best_params)
    valid_report = None
    if valid_neg is not None:
        valid_report = evaluate(
            lambda links: predict_links(g, model, cache, links,
                                        adj=adj_full),
            split.valid, valid_neg, ks=DEFAULT_KS)

    result = TrainResult(model, cache, metrics, best_epoch,
                         best_val if np.isfinite(best_val) else float("nan"),
                         valid_report)
    if out_dir is not None:
        write_run_dir(Path(out_dir), model_cfg, train_cfg, result)
    return result


def write_run_dir(out_dir: Path, model_cfg: ModelConfig,
                  train_cfg: TrainConfig, result: TrainResult) -> None:
    """Persist config.json, checkpoint.lpck, metrics.tsv and report.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {"model": model_cfg.to_dict(), "training": asdict(train_cfg)}
    (out_dir / "config.json").write_text(json.dumps(config, indent=2))
    result.model.store.save(out_dir / "checkpoint.lpck")
    with open(out_dir / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tval_mrr\n")
        for row in result.metrics:
            fh.write(f"{row['epoch']}\t{row['loss']:.6f}\t"
                     f"{row['val_mrr']:.6f}\n")
    if result.valid_report is not None:
        (out_dir / "report.json").write_text(
            json.dumps(result.valid_report.to_dict(), indent=2))


def evaluate_model(g: Graph, model: Model, cache: PprCache,
                   positives: np.ndarray, negatives: NegativeSet,
                   ks=DEFAULT_KS, batch_size: int = 2048) -> RankingReport:
    """Rank positives against negatives with the trained model."""
    return evaluate(
        lambda links: predict_links(g, model, cache, links, batch_size),
        positives, negatives, ks)
