"""Command-line entry point.

Subcommands: ppr, train, eval, heuristic, factors, gradcheck,
dump-context. Each run is driven by a JSON config validated up front
(unknown keys are rejected), and all outputs land under --out-dir.
Exit codes: 2 configuration, 3 input data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .context import Thresholds, context_batch
from .errors import ConfigError, DataError, LpformError, NumericError
from .factors import (PERCENTILE_DEFAULT, assign_factors, per_factor_report)
from .graph import Graph, NodeType, load_dataset, load_graph
from .heuristics import (KATZ_BETA_DEFAULT, KATZ_TRUNCATION_DEFAULT,
                         HeuristicKind, heuristic_fn)
from .model import Model, ModelConfig, encode_nodes, normalized_adjacency, \
    predict_links, prepare_batch, score_links
from .ppr import PprCache, load_cache, precompute_cache, save_cache
from .ranking import DEFAULT_KS, evaluate
from .training import TrainConfig, sample_negatives, train

logger = logging.getLogger(__name__)

_MODEL_KEYS = {"hidden_dim", "gcn_layers", "attention_layers",
               "attention_heads", "leaky_slope", "rpe_hidden_dim",
               "thresholds", "ppr_alpha", "ppr_eps", "max_context"}
_FLAG_KEYS = {"no_att", "no_feat_att", "no_rpe_att", "rpe_embed",
              "rpe_shared", "no_counts", "symmetrize", "mask_target",
              "ppr_filter"}
_TRAIN_KEYS = {"lr", "decay", "weight_decay", "dropout", "epochs",
               "patience", "neg_ratio", "batch_size", "seed", "dtype",
               "eval_negatives"}
_DATA_KEYS = {"dir", "features", "num_nodes"}
_EVAL_KEYS = {"ks"}


class RunConfig:
    """Validated view of a run JSON: data paths, model, training, eval."""

    def __init__(self, data_dir: str, features: str | None,
                 num_nodes: int | None, model: ModelConfig,
                 training: TrainConfig, ks: tuple[int, ...]):
        self.data_dir = data_dir
        self.features = features
        self.num_nodes = num_nodes
        self.model = model
        self.training = training
        self.ks = ks

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = set(raw) - {"data", "model", "training", "eval", "flags"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        def section(name, allowed):
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            return sec

        data = section("data", _DATA_KEYS)
        if "dir" not in data:
            raise ConfigError("config needs data.dir")
        model_sec = section("model", _MODEL_KEYS)
        flags = section("flags", _FLAG_KEYS)
        train_sec = section("training", _TRAIN_KEYS)
        eval_sec = section("eval", _EVAL_KEYS)

        dropout = train_sec.pop("dropout", 0.0)
        try:
            training = TrainConfig(**train_sec, dropout=dropout)
        except TypeError as exc:
            raise ConfigError(f"bad training section: {exc}")
        training.validate()

        model = ModelConfig.from_dict({**model_sec, **flags,
                                       "dropout": dropout})
        ks = tuple(eval_sec.get("ks", DEFAULT_KS))
        if not all(isinstance(k, int) and k >= 1 for k in ks):
            raise ConfigError(f"eval.ks must be positive integers, got {ks}")
        return cls(data["dir"], data.get("features"), data.get("num_nodes"),
                   model, training, ks)

    def load_data(self):
        return load_dataset(self.data_dir, self.features, self.num_nodes)


def _get_cache(g: Graph, cfg: ModelConfig,
               cache_path: str | None) -> PprCache:
    if cache_path:
        cache = load_cache(cache_path)
        if cache.num_nodes != g.num_nodes:
            raise DataError(f"cache covers {cache.num_nodes} nodes, graph "
                            f"has {g.num_nodes}")
        return cache
    logger.info("precomputing PPR cache (alpha=%g eps=%g)", cfg.ppr_alpha,
                cfg.ppr_eps)
    return precompute_cache(g, cfg.ppr_alpha, cfg.ppr_eps)


def _split_links(split, name):
    positives = split.positives(name)
    negatives = split.negatives(name)
    if negatives is None:
        raise DataError(f"split {name!r} ships no negative file")
    return positives, negatives


def _parse_ks(text: str | None, fallback) -> tuple[int, ...]:
    if not text:
        return tuple(fallback)
    try:
        ks = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"--ks expects comma-separated integers, got "
                          f"{text!r}")
    if any(k < 1 for k in ks):
        raise ConfigError(f"--ks entries must be >= 1, got {ks}")
    return ks


def cmd_ppr(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise ConfigError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if args.eps <= 0.0:
        raise ConfigError(f"--eps must be positive, got {args.eps}")
    g = load_graph(args.edges, args.features, args.num_nodes)
    cache = precompute_cache(g, args.alpha, args.eps)
    save_cache(cache, args.out)
    nnz = sum(len(r.entries) for r in cache.rows)
    print(f"wrote {args.out}: {g.num_nodes} rows, {nnz} entries, "
          f"alpha={args.alpha} eps={args.eps}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.training.seed = args.seed
    g, split = cfg.load_data()
    cache = _get_cache(g, cfg.model, args.cache)
    out_dir = Path(args.out_dir)
    result = train(g, split, cfg.model, cfg.training, cache=cache,
                   out_dir=out_dir)
    best = result.best_val_mrr
    print(f"trained {len(result.metrics)} epochs; best epoch "
          f"{result.best_epoch}"
          + (f", val MRR {best:.4f}" if np.isfinite(best) else "")
          + f"; run dir {out_dir}")
    return 0


def _load_model(cfg: RunConfig, g: Graph, checkpoint: str) -> Model:
    model = Model(cfg.model, g.features.shape[1],
                  seed=cfg.training.seed,
                  dtype=np.float32 if cfg.training.dtype == "float32"
                  else np.float64)
    model.store.load_values(ad.load_checkpoint(checkpoint))
    return model


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    g, split = cfg.load_data()
    positives, negatives = _split_links(split, args.split)
    model = _load_model(cfg, g, args.checkpoint)
    cache = _get_cache(g, cfg.model, args.cache)
    ks = _parse_ks(args.ks, cfg.ks)
    report = evaluate(
        lambda links: predict_links(g, model, cache, links), positives,
        negatives, ks)
    out = Path(args.out_dir) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2))
    print(f"{args.split} MRR {report.mrr:.4f} "
          + " ".join(f"H@{k} {v:.4f}" for k, v in report.hits.items())
          + f" -> {out}")
    return 0


def cmd_heuristic(args) -> int:
    cfg = RunConfig.load(args.config)
    g, split = cfg.load_data()
    positives, negatives = _split_links(split, args.split)
    try:
        kind = HeuristicKind(args.kind)
    except ValueError:
        raise ConfigError(f"unknown heuristic kind {args.kind!r}")
    cache = None
    if kind == HeuristicKind.PPR:
        cache = _get_cache(g, cfg.model, args.cache)
    score = heuristic_fn(kind, g, cache, beta=args.beta, L=args.katz_l)
    ks = _parse_ks(args.ks, cfg.ks)
    report = evaluate(score, positives, negatives, ks)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = out_dir / f"{args.kind}_{args.split}_scores.tsv"
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write("u\tv\tlabel\tscore\n")
        for (u, v), s in zip(positives, score(positives)):
            fh.write(f"{u}\t{v}\t1\t{s:.10g}\n")
        neg_flat = negatives.pairs.reshape(-1, 2)
        for (u, v), s in zip(neg_flat, score(neg_flat)):
            fh.write(f"{u}\t{v}\t0\t{s:.10g}\n")
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(),
                                                    indent=2))
    print(f"{args.kind} on {args.split}: MRR {report.mrr:.4f} "
          + " ".join(f"H@{k} {v:.4f}" for k, v in report.hits.items())
          + f" -> {tsv}")
    return 0


def cmd_factors(args) -> int:
    cfg = RunConfig.load(args.config)
    if not 0.0 < args.p < 100.0:
        raise ConfigError(f"--p must lie in (0, 100), got {args.p}")
    g, split = cfg.load_data()
    cache = _get_cache(g, cfg.model, args.cache)
    positives = split.positives(args.split)
    assignments = assign_factors(g, cache, positives, args.p)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else out_dir / "factors.tsv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("u\tv\tfactor\tcn\tppr\tfeatsim\n")
        for a in assignments:
            fh.write(f"{a.link[0]}\t{a.link[1]}\t{a.factor.value}\t"
                     f"{a.scores[0]:.10g}\t{a.scores[1]:.10g}\t"
                     f"{a.scores[2]:.10g}\n")
    tally = {f.value: sum(1 for a in assignments if a.factor == f)
             for f in list(assignments[0].factor.__class__)} if assignments \
        else {}
    print(f"assigned {len(assignments)} links at p={args.p}: {tally} -> {out}")

    if args.checkpoint:
        _, negatives = _split_links(split, args.split)
        model = _load_model(cfg, g, args.checkpoint)
        score = lambda links: predict_links(g, model, cache, links)
        pos_scores = score(positives)
        if negatives.mode == "SHARED":
            neg_scores = score(negatives.pairs)
        else:
            m, k = negatives.pairs.shape[0], negatives.pairs.shape[1]
            neg_scores = score(negatives.pairs.reshape(-1, 2)).reshape(m, k)
        ks = _parse_ks(args.ks, cfg.ks)
        reports = per_factor_report(assignments, pos_scores, neg_scores, ks,
                                    negatives.mode)
        payload = {f.value: r.to_dict() for f, r in reports.items()}
        (out_dir / "factor_reports.json").write_text(json.dumps(payload,
                                                                indent=2))
        for f, r in reports.items():
            tag = "empty" if r.empty else f"MRR {r.mrr:.4f}"
            print(f"  {f.value}: {r.num_positives} links, {tag}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = RunConfig.load(args.config)
    g, split = cfg.load_data()
    cache = _get_cache(g, cfg.model, args.cache)
    model = Model(cfg.model, g.features.shape[1], seed=cfg.training.seed,
                  dtype=np.float64)
    n = min(args.limit_links, len(split.train))
    positives = np.sort(split.train[:n], axis=1)
    negatives = sample_negatives(g, positives, 1, (cfg.training.seed, 0x6C))
    links = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    batch = prepare_batch(g, cache, links, cfg.model)
    adj = normalized_adjacency(g)

    def loss_fn():
        h = encode_nodes(g, model, adj=adj)
        probs = score_links(g, model, h, batch)
        return ad.bce_loss(probs, labels)

    err = ad.grad_check(loss_fn, model.store, h=args.h)
    print(f"gradcheck max relative error: {err:.3e}")
    if err > args.tolerance:
        raise NumericError(f"gradient check failed: {err:.3e} > "
                           f"{args.tolerance:g}")
    return 0


def cmd_dump_context(args) -> int:
    cfg = RunConfig.load(args.config)
    g, split = cfg.load_data()
    cache = _get_cache(g, cfg.model, args.cache)
    links = split.positives(args.split)
    if args.limit:
        links = links[:args.limit]
    contexts = context_batch(g, cache, links, cfg.model.thresholds,
                             cfg.model.ppr_filter, cfg.model.max_context)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else out_dir / "context.tsv"
    names = {int(NodeType.CN): "cn", int(NodeType.ONE_HOP): "1hop",
             int(NodeType.GT_ONE_HOP): "gt1hop"}
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("a\tb\tnode\ttype\tppr_a\tppr_b\n")
        for ctx in contexts:
            a, b = ctx.link
            for node, t, pa, pb in ctx.nodes():
                fh.write(f"{a}\t{b}\t{node}\t{names[int(t)]}\t"
                         f"{pa:.10g}\t{pb:.10g}\n")
    total = sum(c.size for c in contexts)
    print(f"dumped {total} context rows for {len(contexts)} links -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpform",
        description="Link prediction: PPR caches, attention model, "
                    "heuristics, ranking evaluation")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ppr", help="precompute a PPR cache file")
    p.add_argument("--edges", required=True)
    p.add_argument("--features")
    p.add_argument("--num-nodes", type=int)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ppr)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--cache", help="reuse a PPR cache file")
    p.add_argument("--out-dir", default="run")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="rank a split with a trained checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "valid", "test"))
    p.add_argument("--ks", help="comma-separated cutoffs, e.g. 1,3,10,50,100")
    p.add_argument("--cache")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("heuristic", help="evaluate a classical score")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", required=True,
                   choices=[k.value for k in HeuristicKind])
    p.add_argument("--split", default="test",
                   choices=("train", "valid", "test"))
    p.add_argument("--beta", type=float, default=KATZ_BETA_DEFAULT)
    p.add_argument("--katz-l", type=int, default=KATZ_TRUNCATION_DEFAULT)
    p.add_argument("--ks")
    p.add_argument("--cache")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_heuristic)

    p = sub.add_parser("factors", help="assign links to dominant factors")
    p.add_argument("--config", required=True)
    p.add_argument("--p", type=float, default=PERCENTILE_DEFAULT)
    p.add_argument("--split", default="test",
                   choices=("train", "valid", "test"))
    p.add_argument("--checkpoint", help="also report metrics per group")
    p.add_argument("--ks")
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_factors)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--limit-links", type=int, default=8)
    p.add_argument("--cache")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("dump-context", help="dump attended node sets as TSV")
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "valid", "test"))
    p.add_argument("--limit", type=int)
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_dump_context)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except LpformError as exc:
        kind = {2: "config", 3: "io", 4: "numeric"}.get(exc.exit_code,
                                                        "error")
        message = " ".join(str(exc).split())
        print(f'lpform: error kind={kind} message="{message}"',
              file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
