import numpy as np
import pytest

from lpform import autodiff as ad
from lpform.autodiff import grad_check
from lpform.context import ContextSet, Thresholds, select_context
from lpform.errors import ConfigError
from lpform.graph import NodeType, from_edges
from lpform.model import (Model, ModelConfig, attention_layer,
                          batch_from_contexts, encode_nodes, init_params,
                          normalized_adjacency, pairwise_encoding,
                          predict_links, prepare_batch, rpe_encode,
                          rpe_single, score_link, score_links)
from lpform.ppr import cache_from_matrix, exact_ppr_matrix, precompute_cache
from lpform.training import sample_negatives

from conftest import connected_graph, random_graph

ALPHA = 0.15


def small_model(g, hidden=6, rpe=4, seed=0, **kwargs):
    cfg = ModelConfig(hidden_dim=hidden, rpe_hidden_dim=rpe,
                      ppr_alpha=ALPHA, **kwargs)
    return Model(cfg, g.features.shape[1], seed=seed)


def exact_cache(g):
    return cache_from_matrix(exact_ppr_matrix(g, ALPHA, iters=300), ALPHA)


def synthetic_context(a, b, nodes, node_type, ppr_a, ppr_b):
    m = len(nodes)
    types = np.full(m, int(node_type), dtype=np.int64)
    counts = [0, 0, 0]
    counts[int(node_type)] = m
    return ContextSet((a, b), np.asarray(nodes, dtype=np.int64), types,
                      np.full(m, ppr_a), np.full(m, ppr_b), tuple(counts))


# ---------- encoder ----------

def test_encode_isolated_node_is_relu_of_features():
    feats = np.array([[-1.0, 2.0]])
    g = from_edges(np.zeros((0, 2), dtype=np.int64), 1, feats)
    model = small_model(g, hidden=2)
    model.config.gcn_layers = 1
    model = Model(model.config, 2, seed=0)
    model.store["gcn.0.W"].values = np.eye(2)
    h = encode_nodes(g, model)
    assert np.allclose(h.values, [[0.0, 2.0]])


def test_encoder_permutation_equivariance(rng):
    g = random_graph(12, 0.3, rng, min_degree=1, feat_dim=4)
    perm = rng.permutation(12)
    inv = np.argsort(perm)
    edges = [(int(perm[v]), int(perm[u])) for v in range(12)
             for u in g.neighbors(v) if v < u]
    g2 = from_edges(np.asarray(edges), 12, g.features[inv])
    model = small_model(g, seed=3)
    h1 = encode_nodes(g, model).values
    h2 = encode_nodes(g2, model).values
    assert np.allclose(h2[perm], h1, atol=1e-10)
    # identical call is bit-identical
    assert np.array_equal(h1, encode_nodes(g, model).values)


def test_encoder_gradient_two_layers(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, hidden=4, seed=1)
    err = grad_check(lambda: ad.mean(encode_nodes(g, model)), model.store,
                     h=1e-6)
    assert err <= 1e-4


def test_normalized_adjacency_with_dropped_edges(rng):
    g = random_graph(10, 0.4, rng, min_degree=1)
    # find an existing edge
    a = 0
    b = int(g.neighbors(0)[0])
    full = normalized_adjacency(g)
    masked = normalized_adjacency(g, drop_edges=np.array([[a, b]]))
    assert full[a, b] != 0
    assert masked[a, b] == 0
    assert masked[b, a] == 0


# ---------- positional encoding ----------

def test_rpe_order_invariance_exact(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=5)
    for t in (0, 1, 2):
        for _ in range(5):
            p, q = rng.random(), rng.random()
            assert np.array_equal(rpe_single(model, p, q, t),
                                  rpe_single(model, q, p, t))


def test_rpe_equal_pair_degenerates_to_double_mlp(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=5)
    s = model.store
    p = 0.37
    for t, key in ((0, "cn"), (1, "one"), (2, "gt1")):
        x = np.array([[p, p]])
        hidden = np.maximum(x @ s[f"rpe.{key}.W1"].values
                            + s[f"rpe.{key}.b1"].values, 0.0)
        manual = hidden @ s[f"rpe.{key}.W2"].values + s[f"rpe.{key}.b2"].values
        assert np.allclose(rpe_single(model, p, p, t), 2.0 * manual[0])


def test_rpe_types_use_distinct_networks(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=7)
    outs = [rpe_single(model, 0.3, 0.1, t) for t in (0, 1, 2)]
    assert not np.allclose(outs[0], outs[1])
    assert not np.allclose(outs[1], outs[2])


def test_rpe_shared_network_ignores_type(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=7, rpe_shared=True)
    outs = [rpe_single(model, 0.3, 0.1, t) for t in (0, 1, 2)]
    assert np.allclose(outs[0], outs[1])
    assert np.allclose(outs[1], outs[2])


def test_rpe_embedding_variant_ignores_ppr(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=7, rpe_embed=True)
    assert "rpe.embed" in model.store
    assert "rpe.cn.W1" not in model.store
    assert np.array_equal(rpe_single(model, 0.9, 0.1, 1),
                          rpe_single(model, 0.2, 0.4, 1))
    assert not np.allclose(rpe_single(model, 0.5, 0.5, 0),
                           rpe_single(model, 0.5, 0.5, 1))


# ---------- attention ----------

def test_identical_context_nodes_get_uniform_weights():
    feats = np.array([[0.5, 1.0]] * 6)
    g = from_edges(np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]),
                   6, feats)
    model = small_model(g, hidden=4, seed=2)
    h_const = ad.constant(np.tile(np.array([0.3, -0.2, 0.7, 0.1]), (6, 1)))
    ctx = synthetic_context(0, 1, [2, 3, 4], NodeType.ONE_HOP, 0.3, 0.2)
    weights, _ = attention_layer(model, h_const, ctx)
    assert np.allclose(weights, 1.0 / 3.0, atol=1e-12)


def test_single_context_node_weight_is_one(rng):
    g = random_graph(8, 0.4, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=2)
    h = encode_nodes(g, model)
    ctx = synthetic_context(0, 1, [4], NodeType.GT_ONE_HOP, 0.1, 0.05)
    weights, _ = attention_layer(model, h, ctx)
    assert weights.shape == (1,)
    assert weights[0] == pytest.approx(1.0, abs=1e-12)


def dense_pairwise_oracle(model, h_np, ctx):
    """Plain-numpy evaluation of the weighted sum over the full vertex set,
    with zero weight for every node outside the context."""
    s = model.store
    cfg = model.config
    w_mat = s["att.0.0.W"].values
    a_vec = s["att.0.0.a"].values
    wv = s["att.0.0.Wv"].values

    def mlp(key, x):
        hidden = np.maximum(x @ s[f"rpe.{key}.W1"].values
                            + s[f"rpe.{key}.b1"].values, 0.0)
        return hidden @ s[f"rpe.{key}.W2"].values + s[f"rpe.{key}.b2"].values

    a, b = ctx.link
    keys = {0: "cn", 1: "one", 2: "gt1"}
    logits, values, members = [], [], []
    for i, u in enumerate(ctx.node_ids):
        pa, pb = ctx.ppr_a[i], ctx.ppr_b[i]
        key = keys[int(ctx.node_types[i])]
        rpe = (mlp(key, np.array([pa, pb])) + mlp(key, np.array([pb, pa])))
        z = np.concatenate([h_np[a] @ w_mat, h_np[b] @ w_mat,
                            h_np[u] @ w_mat, rpe])
        z = np.where(z > 0, z, cfg.leaky_slope * z)
        logits.append(z @ a_vec)
        values.append(np.concatenate([h_np[u], rpe]) @ wv)
        members.append(int(u))
    total = np.zeros(model.config.hidden_dim)
    if logits:
        logits = np.asarray(logits)
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        # every vertex outside the context carries weight zero
        for w_i, v_i in zip(weights, values):
            total += w_i * v_i
    return total


def test_attention_matches_dense_oracle(rng):
    g = random_graph(14, 0.35, rng, min_degree=1, feat_dim=4)
    cache = exact_cache(g)
    model = small_model(g, seed=9)
    h = encode_nodes(g, model)
    for _ in range(5):
        a, b = map(int, rng.choice(14, size=2, replace=False))
        ctx = select_context(g, cache, a, b, Thresholds(0.0, 1e-4, 1e-3))
        _, s_partial = attention_layer(model, h, ctx)
        oracle = dense_pairwise_oracle(model, h.values, ctx)
        assert np.allclose(s_partial.values, oracle, atol=1e-10)


def test_pairwise_single_layer_equals_attention_layer(rng):
    g = random_graph(12, 0.3, rng, min_degree=1, feat_dim=4)
    cache = exact_cache(g)
    model = small_model(g, seed=4)
    h = encode_nodes(g, model)
    ctx = select_context(g, cache, 0, 1, Thresholds(0.0, 1e-4, 1e-3))
    batch = batch_from_contexts(np.array([[0, 1]]), [ctx])
    h_a = ad.take_rows(h, batch.a_ids)
    h_b = ad.take_rows(h, batch.b_ids)
    h_u = ad.take_rows(h, batch.ctx_ids)
    rpe = rpe_encode(model, batch.ppr_pairs, batch.ctx_types)
    s = pairwise_encoding(model, ad.take_rows(h_a, batch.segments),
                          ad.take_rows(h_b, batch.segments), h_u, rpe,
                          batch.segments, 1)
    _, s_single = attention_layer(model, h, ctx)
    assert np.allclose(s.values[0], s_single.values, atol=1e-12)


def test_two_layers_differ_from_one(rng):
    g = random_graph(12, 0.35, rng, min_degree=1, feat_dim=4)
    cache = precompute_cache(g, ALPHA, 1e-7)
    p1 = predict_links(g, small_model(g, seed=6), cache,
                       np.array([[0, 1]]))
    p2 = predict_links(g, small_model(g, seed=6, attention_layers=2), cache,
                       np.array([[0, 1]]))
    assert p1[0] != p2[0]


def test_empty_context_zero_encoding_and_valid_probability(rng):
    g = random_graph(10, 0.3, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=8)
    h = encode_nodes(g, model)
    empty = synthetic_context(0, 1, [], NodeType.CN, 0.0, 0.0)
    batch = batch_from_contexts(np.array([[0, 1]]), [empty])
    h_a = ad.take_rows(h, batch.a_ids)
    h_b = ad.take_rows(h, batch.b_ids)
    h_u = ad.take_rows(h, batch.ctx_ids)
    rpe = rpe_encode(model, batch.ppr_pairs, batch.ctx_types)
    s = pairwise_encoding(model, ad.take_rows(h_a, batch.segments),
                          ad.take_rows(h_b, batch.segments), h_u, rpe,
                          batch.segments, 1)
    assert np.allclose(s.values, 0.0)
    pred = score_link(g, model, h, empty)
    assert 0.0 < pred.probability < 1.0

    # multi-layer stacks keep the empty-context encoding at zero
    deep = small_model(g, seed=8, attention_layers=3)
    h3 = encode_nodes(g, deep)
    pred3 = score_link(g, deep, h3, empty)
    assert 0.0 < pred3.probability < 1.0


def test_attention_weights_normalize_per_link(rng):
    g = random_graph(16, 0.3, rng, min_degree=1, feat_dim=4)
    cache = precompute_cache(g, ALPHA, 1e-7)
    model = small_model(g, seed=11)
    h = encode_nodes(g, model)
    batch = prepare_batch(g, cache, np.array([[0, 1], [2, 5], [3, 9]]),
                          model.config)
    collected = []
    score_links(g, model, h, batch, collect_weights=collected)
    weights = collected[0]
    for link_idx in range(3):
        seg = weights[batch.segments == link_idx]
        if len(seg):
            assert seg.sum() == pytest.approx(1.0, abs=1e-9)


# ---------- score head ----------

def test_probability_is_sigmoid_of_logit(rng):
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    cache = precompute_cache(g, ALPHA, 1e-7)
    model = small_model(g, seed=3)
    probs = predict_links(g, model, cache, np.array([[0, 1], [2, 7]]))
    assert np.all((probs > 0) & (probs < 1))
    # the trace-producing path agrees with the batched one
    h = encode_nodes(g, model)
    ctx = select_context(g, cache, 0, 1, model.config.thresholds)
    pred = score_link(g, model, h, ctx)
    assert pred.probability == pytest.approx(probs[0], abs=1e-12)
    if pred.attention is not None and len(pred.attention):
        assert pred.attention.sum() == pytest.approx(1.0, abs=1e-9)


def test_empty_context_reduces_to_endpoint_product_predictor(rng):
    # with no attended nodes and counts zeroed the head sees only the
    # elementwise endpoint product, so attention parameters are irrelevant
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=12, no_counts=True)
    h = encode_nodes(g, model)
    empty = synthetic_context(0, 1, [], NodeType.CN, 0.0, 0.0)
    before = score_link(g, model, h, empty).probability
    model.store["att.0.0.Wv"].values = \
        model.store["att.0.0.Wv"].values * 3.14 + 1.0
    model.store["rpe.cn.W1"].values = model.store["rpe.cn.W1"].values + 2.0
    after = score_link(g, model, h, empty).probability
    assert before == after


def test_symmetrize_flag_bounds_score_asymmetry(rng):
    g = random_graph(12, 0.35, rng, min_degree=1, feat_dim=4)
    cache = precompute_cache(g, ALPHA, 1e-7)

    def ordered_score(model, a, b):
        ctx = select_context(g, cache, a, b, model.config.thresholds)
        h = encode_nodes(g, model)
        batch = batch_from_contexts(np.array([[a, b]]), [ctx])
        return float(score_links(g, model, h, batch).values[0])

    plain = small_model(g, seed=13)
    sym = small_model(g, seed=13, symmetrize=True)
    a, b = 0, 1
    assert ordered_score(sym, a, b) == ordered_score(sym, b, a)
    assert ordered_score(plain, a, b) != ordered_score(plain, b, a)


# ---------- ablation structure ----------

def test_no_att_structure(rng):
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    model = small_model(g, seed=1, no_att=True)
    assert "att.0.0.a" not in model.store
    assert not any(n.startswith("rpe.") for n in model.store.names())
    assert model.store["att.0.0.Wv"].values.shape == (6, 6)
    cache = precompute_cache(g, ALPHA, 1e-7)
    h = encode_nodes(g, model)
    batch = prepare_batch(g, cache, np.array([[0, 1]]), model.config)
    collected = []
    score_links(g, model, h, batch, collect_weights=collected)
    assert np.all(collected[0] == 1.0)


def test_logit_ablation_shapes(rng):
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    base = small_model(g, seed=1)
    no_feat = small_model(g, seed=1, no_feat_att=True)
    no_rpe = small_model(g, seed=1, no_rpe_att=True)
    h, r = 6, 4
    assert base.store["att.0.0.a"].values.shape == (3 * h + r,)
    assert no_feat.store["att.0.0.a"].values.shape == (r,)
    assert no_rpe.store["att.0.0.a"].values.shape == (3 * h,)
    # value path unchanged by logit ablations
    for m in (base, no_feat, no_rpe):
        assert m.store["att.0.0.Wv"].values.shape == (h + r, h)
    with pytest.raises(ConfigError):
        small_model(g, seed=1, no_feat_att=True, no_rpe_att=True)


def test_no_counts_shrinks_head_input_by_three(rng):
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    base = small_model(g, seed=1)
    trimmed = small_model(g, seed=1, no_counts=True)
    assert base.store["head.W1"].values.shape[0] == 2 * 6 + 3
    assert trimmed.store["head.W1"].values.shape[0] == 2 * 6


def test_multi_head_averages(rng):
    g = random_graph(10, 0.35, rng, min_degree=1, feat_dim=3)
    cache = precompute_cache(g, ALPHA, 1e-7)
    model = small_model(g, seed=2, attention_heads=3)
    assert "att.0.2.W" in model.store
    probs = predict_links(g, model, cache, np.array([[0, 1]]))
    assert 0.0 < probs[0] < 1.0


# ---------- gradients through the whole model ----------

def test_full_model_gradient_on_toy_graph(rng):
    g = random_graph(10, 0.4, rng, min_degree=1, feat_dim=4)
    cache = precompute_cache(g, ALPHA, 1e-7)
    model = small_model(g, hidden=6, rpe=4, seed=0)
    positives = np.array([[0, int(g.neighbors(0)[0])],
                          [1, int(g.neighbors(1)[0])]])
    negatives = sample_negatives(g, positives, 1, 0)
    links = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(2), np.zeros(2)])
    batch = prepare_batch(g, cache, links, model.config)

    def loss():
        h = encode_nodes(g, model)
        probs = score_links(g, model, h, batch)
        return ad.bce_loss(probs, labels)

    err = grad_check(loss, model.store, h=1e-5)
    assert err <= 1e-4


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(ppr_filter="maybe").validate()
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"nonsense_key": 1})
    cfg = ModelConfig.from_dict({"hidden_dim": 8,
                                 "thresholds": {"one_hop": 1e-3}})
    assert cfg.thresholds.one_hop == 1e-3
    assert cfg.to_dict()["thresholds"]["one_hop"] == 1e-3
