"""The four-stage link-prediction model.

1. A GCN encodes every node once, independent of any target link.
2. For each target pair the attended context nodes come from the
   PPR-thresholded selector.
3. Cross-attention over the context produces the pairwise encoding: raw
   logits follow the GATv2 recipe (a learned vector dotted with a leaky
   ReLU over the concatenated projections of both endpoints, the context
   node, and its positional encoding), normalized per link by a segment
   softmax; values are a projection of the context state concatenated
   with the positional encoding.
4. The score head concatenates the endpoint product, the pairwise
   encoding, and log1p of the per-type context counts, and maps through
   an MLP to a probability.

The positional encoding of a context node is a per-node-type MLP of its
two PPR scores, summed over both argument orders so it cannot depend on
the endpoint order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .context import ContextSet, Thresholds, context_batch, swap_endpoints
from .errors import ConfigError
from .graph import Graph
from .ppr import PprCache

_RPE_TYPE_KEYS = ("cn", "one", "gt1")


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    gcn_layers: int = 2
    attention_layers: int = 1
    attention_heads: int = 1
    leaky_slope: float = 0.2
    dropout: float = 0.0
    rpe_hidden_dim: int = 16
    thresholds: Thresholds = field(default_factory=Thresholds)
    ppr_alpha: float = 0.15
    ppr_eps: float = 1e-5
    symmetrize: bool = False
    # ablation flags; each alters exactly the term it names
    no_att: bool = False        # attention weights fixed to 1, positional encoding removed
    no_feat_att: bool = False   # node states dropped from the attention logits
    no_rpe_att: bool = False    # positional encoding dropped from the attention logits
    rpe_embed: bool = False     # learned per-type embedding instead of the PPR MLP
    rpe_shared: bool = False    # one PPR MLP for all node types
    no_counts: bool = False     # context counts dropped from the score head
    mask_target: bool = False   # drop each batch's positive edges from message passing
    ppr_filter: str = "and"
    max_context: int | None = 2048

    def validate(self) -> None:
        for name in ("hidden_dim", "gcn_layers", "attention_layers",
                     "attention_heads", "rpe_hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.leaky_slope <= 0.0:
            raise ConfigError(f"leaky_slope must be positive, got "
                              f"{self.leaky_slope}")
        if not 0.0 < self.ppr_alpha < 1.0:
            raise ConfigError(f"ppr_alpha must lie in (0, 1), got "
                              f"{self.ppr_alpha}")
        if self.ppr_eps <= 0.0:
            raise ConfigError(f"ppr_eps must be positive, got {self.ppr_eps}")
        if self.ppr_filter not in ("and", "or"):
            raise ConfigError(f"ppr_filter must be 'and' or 'or', got "
                              f"{self.ppr_filter!r}")
        if self.no_feat_att and self.no_rpe_att:
            raise ConfigError("no_feat_att and no_rpe_att together leave "
                              "the attention logits empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = {"cn": self.thresholds.cn,
                           "one_hop": self.thresholds.one_hop,
                           "gt_one_hop": self.thresholds.gt_one_hop}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        thr = d.pop("thresholds", {})
        if not isinstance(thr, dict):
            raise ConfigError("thresholds must be an object")
        unknown = set(thr) - {"cn", "one_hop", "gt_one_hop"}
        if unknown:
            raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown model config keys: {sorted(bad)}")
        cfg = cls(**d, thresholds=Thresholds(**thr))
        cfg.validate()
        return cfg


@dataclass
class LinkPrediction:
    """One scored target pair; the probability is the sigmoid of the
    score-head logit."""

    link: tuple[int, int]
    probability: float
    attention: np.ndarray | None = None  # per-context-node weights


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
            shape: tuple) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(config: ModelConfig, in_dim: int, seed: int = 0,
                dtype=np.float64) -> ParamStore:
    """Create every trainable tensor in a fixed, seed-deterministic order."""
    config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype=dtype)
    h = config.hidden_dim
    r = config.rpe_hidden_dim

    d_in = in_dim
    for layer in range(config.gcn_layers):
        store.add(f"gcn.{layer}.W", _glorot(rng, d_in, h, (d_in, h)))
        store.add(f"gcn.{layer}.b", np.zeros(h))
        d_in = h

    if not config.no_att:
        if config.rpe_embed:
            store.add("rpe.embed", rng.normal(0.0, 0.1, size=(3, r)))
        else:
            keys = ("shared",) if config.rpe_shared else _RPE_TYPE_KEYS
            for key in keys:
                store.add(f"rpe.{key}.W1", _glorot(rng, 2, r, (2, r)))
                store.add(f"rpe.{key}.b1", np.zeros(r))
                store.add(f"rpe.{key}.W2", _glorot(rng, r, r, (r, r)))
                store.add(f"rpe.{key}.b2", np.zeros(r))

    logit_dim = 0
    if not config.no_feat_att:
        logit_dim += 3 * h
    if not config.no_rpe_att:
        logit_dim += r
    value_in = h if config.no_att else h + r
    for layer in range(config.attention_layers):
        for head in range(config.attention_heads):
            prefix = f"att.{layer}.{head}"
            if not config.no_att:
                store.add(f"{prefix}.W", _glorot(rng, h, h, (h, h)))
                store.add(f"{prefix}.a", _glorot(rng, logit_dim, 1,
                                                 (logit_dim,)))
            store.add(f"{prefix}.Wv", _glorot(rng, value_in, h, (value_in, h)))

    head_in = 2 * h + (0 if config.no_counts else 3)
    store.add("head.W1", _glorot(rng, head_in, h, (head_in, h)))
    store.add("head.b1", np.zeros(h))
    store.add("head.W2", _glorot(rng, h, 1, (h, 1)))
    store.add("head.b2", np.zeros(1))
    return store


class Model:
    """Configuration plus its parameter store."""

    def __init__(self, config: ModelConfig, in_dim: int, seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.in_dim = in_dim
        self.store = init_params(config, in_dim, seed, dtype)

    @property
    def dtype(self):
        return self.store.dtype


def normalized_adjacency(g: Graph,
                         drop_edges: np.ndarray | None = None) -> sp.csr_matrix:
    """Symmetric GCN normalization with self-loops added:
    D^-1/2 (A + I) D^-1/2, optionally with some undirected edges removed."""
    adj = g.adjacency()
    if drop_edges is not None and len(drop_edges):
        drop = np.asarray(drop_edges, dtype=np.int64).reshape(-1, 2)
        mask = sp.csr_matrix(
            (np.ones(2 * len(drop)),
             (np.concatenate([drop[:, 0], drop[:, 1]]),
              np.concatenate([drop[:, 1], drop[:, 0]]))),
            shape=adj.shape)
        mask.data = np.minimum(mask.data, 1.0)
        adj = adj - adj.multiply(mask)
    adj = adj + sp.eye(g.num_nodes, format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ adj @ d).tocsr()


def encode_nodes(g: Graph, model: Model, *, training: bool = False,
                 rng: np.random.Generator | None = None,
                 adj: sp.csr_matrix | None = None) -> Tensor:
    """Stacked GCN layers over the whole graph; one pass serves every
    target link. ReLU follows each layer; dropout only while training."""
    cfg = model.config
    if adj is None:
        adj = normalized_adjacency(g)
    h = ad.constant(g.features, dtype=model.dtype)
    for layer in range(cfg.gcn_layers):
        w = model.store[f"gcn.{layer}.W"]
        b = model.store[f"gcn.{layer}.b"]
        h = ad.relu(ad.affine(ad.sparse_matmul(adj, h), w, b))
        if training and cfg.dropout > 0.0:
            h = ad.dropout(h, cfg.dropout, rng)
    return h


@dataclass
class LinkBatch:
    """Flattened per-context arrays for a batch of links."""

    links: np.ndarray        # int64 [B, 2], canonical order a < b
    contexts: list[ContextSet]
    a_ids: np.ndarray        # int64 [B]
    b_ids: np.ndarray
    segments: np.ndarray     # int64 [m_total], sorted, link index per row
    ctx_ids: np.ndarray      # int64 [m_total]
    ctx_types: np.ndarray    # int64 [m_total]
    ppr_pairs: np.ndarray    # float64 [m_total, 2]
    counts: np.ndarray       # float64 [B, 3]

    @property
    def num_links(self) -> int:
        return len(self.links)


def batch_from_contexts(links: np.ndarray,
                        contexts: list[ContextSet]) -> LinkBatch:
    segs, ids, types, pa, pb = [], [], [], [], []
    counts = np.zeros((len(contexts), 3), dtype=np.float64)
    for i, ctx in enumerate(contexts):
        segs.append(np.full(ctx.size, i, dtype=np.int64))
        ids.append(ctx.node_ids)
        types.append(ctx.node_types)
        pa.append(ctx.ppr_a)
        pb.append(ctx.ppr_b)
        counts[i] = ctx.counts
    cat = lambda parts, dt: (np.concatenate(parts) if parts
                             else np.zeros(0, dtype=dt))
    if pa:
        ppr_pairs = np.stack([cat(pa, np.float64), cat(pb, np.float64)],
                             axis=1)
    else:
        ppr_pairs = np.zeros((0, 2))
    return LinkBatch(links, contexts, links[:, 0], links[:, 1],
                     cat(segs, np.int64), cat(ids, np.int64),
                     cat(types, np.int64), ppr_pairs, counts)


def prepare_batch(g: Graph, cache: PprCache, links: np.ndarray,
                  config: ModelConfig) -> LinkBatch:
    """Canonicalize links (a < b) and build their contexts from the cache."""
    links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    links = np.sort(links, axis=1)
    contexts = context_batch(g, cache, links, config.thresholds,
                             config.ppr_filter, config.max_context)
    return batch_from_contexts(links, contexts)


def rpe_encode(model: Model, ppr_pairs: np.ndarray,
               types: np.ndarray) -> Tensor:
    """Positional encodings for context rows from their (ppr_a, ppr_b)
    pairs: per-type MLP applied to both argument orders and summed, which
    makes the output exactly invariant to swapping the pair."""
    cfg = model.config
    m = len(types)
    dtype = model.dtype
    if cfg.rpe_embed:
        return ad.take_rows(model.store["rpe.embed"], types)
    pq = ad.constant(ppr_pairs, dtype=dtype)
    qp = ad.constant(ppr_pairs[:, ::-1], dtype=dtype)

    def mlp(key: str, x: Tensor) -> Tensor:
        s = model.store
        hidden = ad.relu(ad.affine(x, s[f"rpe.{key}.W1"], s[f"rpe.{key}.b1"]))
        return ad.affine(hidden, s[f"rpe.{key}.W2"], s[f"rpe.{key}.b2"])

    if cfg.rpe_shared:
        return ad.add(mlp("shared", pq), mlp("shared", qp))

    total = None
    for t, key in enumerate(_RPE_TYPE_KEYS):
        mask = ad.constant((types == t).astype(dtype))
        part = ad.scale_rows(ad.add(mlp(key, pq), mlp(key, qp)), mask)
        total = part if total is None else ad.add(total, part)
    if total is None:
        total = ad.constant(np.zeros((m, cfg.rpe_hidden_dim), dtype=dtype))
    return total


def rpe_single(model: Model, ppr_au: float, ppr_bu: float, node_type: int
               ) -> np.ndarray:
    """Positional encoding vector for a single context node."""
    out = rpe_encode(model, np.array([[ppr_au, ppr_bu]]),
                     np.array([node_type], dtype=np.int64))
    return out.values[0]


def _attention_head(model: Model, layer: int, head: int, h_a_exp: Tensor,
                    h_b_exp: Tensor, h_u: Tensor, rpe: Tensor | None,
                    segments: np.ndarray, num_links: int
                    ) -> tuple[Tensor, Tensor]:
    """One head's (weights over context rows, values) pair."""
    cfg = model.config
    s = model.store
    prefix = f"att.{layer}.{head}"
    if cfg.no_att:
        weights = ad.constant(np.ones(len(segments)), dtype=model.dtype)
        values = ad.matmul(h_u, s[f"{prefix}.Wv"])
        return weights, values

    w = s[f"{prefix}.W"]
    parts = []
    if not cfg.no_feat_att:
        parts.extend([ad.matmul(h_a_exp, w), ad.matmul(h_b_exp, w),
                      ad.matmul(h_u, w)])
    if not cfg.no_rpe_att:
        parts.append(rpe)
    z = ad.leaky_relu(ad.concat(parts, axis=1), cfg.leaky_slope)
    logits = ad.matmul(z, s[f"{prefix}.a"])
    weights = ad.segment_softmax(logits, segments, num_links)
    values = ad.matmul(ad.concat([h_u, rpe], axis=1), s[f"{prefix}.Wv"])
    return weights, values


def pairwise_encoding(model: Model, h_a_exp: Tensor, h_b_exp: Tensor,
                      h_u: Tensor, rpe: Tensor | None, segments: np.ndarray,
                      num_links: int, collect_weights: list | None = None
                      ) -> Tensor:
    """Stacked attention layers over flattened contexts.

    Layers before the last add each context row's own weighted value back
    onto its state (a residual update); the last layer's per-link weighted
    sum is the pairwise encoding.
    """
    cfg = model.config
    inv_heads = 1.0 / cfg.attention_heads
    out = None
    for layer in range(cfg.attention_layers):
        s_heads = None
        msg_heads = None
        for head in range(cfg.attention_heads):
            weights, values = _attention_head(model, layer, head, h_a_exp,
                                              h_b_exp, h_u, rpe, segments,
                                              num_links)
            if collect_weights is not None and layer == cfg.attention_layers - 1:
                collect_weights.append(weights.values.copy())
            s_h = ad.segment_weighted_sum(values, weights, segments,
                                          num_links)
            s_heads = s_h if s_heads is None else ad.add(s_heads, s_h)
            if layer < cfg.attention_layers - 1:
                msg = ad.scale_rows(values, weights)
                msg_heads = msg if msg_heads is None else ad.add(msg_heads, msg)
        out = ad.scale(s_heads, inv_heads)
        if layer < cfg.attention_layers - 1:
            h_u = ad.add(h_u, ad.scale(msg_heads, inv_heads))
    return out


def _forward_logits(model: Model, h_tensor: Tensor, batch: LinkBatch,
                    swapped: bool, training: bool,
                    rng: np.random.Generator | None,
                    collect_weights: list | None = None) -> Tensor:
    cfg = model.config
    a_ids = batch.b_ids if swapped else batch.a_ids
    b_ids = batch.a_ids if swapped else batch.b_ids
    ppr_pairs = batch.ppr_pairs[:, ::-1] if swapped else batch.ppr_pairs

    h_a = ad.take_rows(h_tensor, a_ids)
    h_b = ad.take_rows(h_tensor, b_ids)
    h_u = ad.take_rows(h_tensor, batch.ctx_ids)
    h_a_exp = ad.take_rows(h_a, batch.segments)
    h_b_exp = ad.take_rows(h_b, batch.segments)

    rpe = None if cfg.no_att else rpe_encode(model, ppr_pairs,
                                             batch.ctx_types)
    s = pairwise_encoding(model, h_a_exp, h_b_exp, h_u, rpe, batch.segments,
                          batch.num_links, collect_weights)

    parts = [ad.mul(h_a, h_b), s]
    if not cfg.no_counts:
        parts.append(ad.constant(np.log1p(batch.counts), dtype=model.dtype))
    x = ad.concat(parts, axis=1)
    hidden = ad.relu(ad.affine(x, model.store["head.W1"],
                               model.store["head.b1"]))
    if training and cfg.dropout > 0.0:
        hidden = ad.dropout(hidden, cfg.dropout, rng)
    return ad.flatten(ad.affine(hidden, model.store["head.W2"],
                                model.store["head.b2"]))


def score_links(g: Graph, model: Model, h_tensor: Tensor, batch: LinkBatch,
                *, training: bool = False,
                rng: np.random.Generator | None = None,
                collect_weights: list | None = None) -> Tensor:
    """Probabilities for a prepared batch. With ``symmetrize`` the logits
    of both endpoint orders are averaged, making the score exactly
    symmetric; otherwise the canonical order is used alone."""
    logits = _forward_logits(model, h_tensor, batch, False, training, rng,
                             collect_weights)
    if model.config.symmetrize:
        swapped = _forward_logits(model, h_tensor, batch, True, training, rng)
        logits = ad.scale(ad.add(logits, swapped), 0.5)
    return ad.sigmoid(logits)


def score_link(g: Graph, model: Model, h_tensor: Tensor, context: ContextSet
               ) -> LinkPrediction:
    """Score a single link from its prebuilt context."""
    links = np.asarray([context.link], dtype=np.int64)
    batch = batch_from_contexts(links, [context])
    weights: list = []
    probs = score_links(g, model, h_tensor, batch, collect_weights=weights)
    trace = np.mean(weights, axis=0) if weights else None
    return LinkPrediction(tuple(context.link), float(probs.values[0]), trace)


def attention_layer(model: Model, h_tensor: Tensor, context: ContextSet,
                    layer: int = 0) -> tuple[np.ndarray, Tensor]:
    """Single-link view of one attention layer: the softmax weights over
    the context and the per-link weighted value sum (head-averaged)."""
    links = np.asarray([context.link], dtype=np.int64)
    batch = batch_from_contexts(links, [context])
    h_a = ad.take_rows(h_tensor, batch.a_ids)
    h_b = ad.take_rows(h_tensor, batch.b_ids)
    h_u = ad.take_rows(h_tensor, batch.ctx_ids)
    h_a_exp = ad.take_rows(h_a, batch.segments)
    h_b_exp = ad.take_rows(h_b, batch.segments)
    cfg = model.config
    rpe = None if cfg.no_att else rpe_encode(model, batch.ppr_pairs,
                                             batch.ctx_types)
    s_total = None
    w_total = np.zeros(len(batch.segments))
    for head in range(cfg.attention_heads):
        weights, values = _attention_head(model, layer, head, h_a_exp,
                                          h_b_exp, h_u, rpe, batch.segments,
                                          1)
        s_h = ad.segment_weighted_sum(values, weights, batch.segments, 1)
        s_total = s_h if s_total is None else ad.add(s_total, s_h)
        w_total = w_total + weights.values
    inv = 1.0 / cfg.attention_heads
    return w_total * inv, ad.flatten(ad.scale(s_total, inv))


def predict_links(g: Graph, model: Model, cache: PprCache, links: np.ndarray,
                  batch_size: int = 2048,
                  adj: sp.csr_matrix | None = None) -> np.ndarray:
    """Probabilities for an (m, 2) link array, scored in chunks against
    frozen parameters."""
    links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    h_tensor = encode_nodes(g, model, adj=adj)
    h_frozen = ad.constant(h_tensor.values, dtype=model.dtype)
    out = np.zeros(len(links), dtype=np.float64)
    for lo in range(0, len(links), batch_size):
        chunk = links[lo:lo + batch_size]
        batch = prepare_batch(g, cache, chunk, model.config)
        probs = score_links(g, model, h_frozen, batch)
        out[lo:lo + len(chunk)] = probs.values
    return out
