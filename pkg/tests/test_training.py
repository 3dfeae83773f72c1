"""Trainer tests: config parsing, instance generation, optimizer, full loop."""

import numpy as np
import pytest

from gaussbox.embeddings import EmbeddingError, pseudo_clustered_embeddings, pseudo_hash_embeddings
from gaussbox.projection import load_params, save_params
from gaussbox.taxonomy import ConceptRecord, TaxonomyGraph
from gaussbox.training import (
    AdamState,
    ConfigError,
    DivergenceError,
    TrainConfig,
    config_hash,
    generate_instances,
    load_config,
    load_history,
    optimizer_step,
    save_config,
    save_history,
    train,
)


def graph(ids, edges):
    return TaxonomyGraph([ConceptRecord(i, i.upper()) for i in ids], edges)


def family():
    return graph(
        ["r", "p", "u", "c", "s", "k"],
        [("r", "p"), ("r", "u"), ("p", "c"), ("p", "s"), ("u", "k")],
    )


def small_tree(fanout=3, depth=2):
    records, edges, frontier = ["r"], [], ["r"]
    for _ in range(depth):
        nxt = []
        for p in frontier:
            for j in range(fanout):
                i = f"{p}.{j}"
                records.append(i)
                edges.append((p, i))
                nxt.append(i)
        frontier = nxt
    return graph(records, edges)


# ---------------------------------------------------------------------------
# config


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(dim=16, lr=0.01, negatives=3, activation="gelu", patience=2)
    path = tmp_path / "train.cfg"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_unknown_key_is_named(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("dim=8\nwibble=3\n")
    with pytest.raises(ConfigError, match="wibble"):
        load_config(path)


def test_config_partial_file_fills_defaults(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("# comment\n\ndim=8\nlr=0.005\n")
    cfg = load_config(path)
    assert cfg.dim == 8 and cfg.lr == 0.005
    assert cfg.hidden == TrainConfig().hidden
    assert cfg.epochs == TrainConfig().epochs


def test_config_bad_value(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("dim=eight\n")
    with pytest.raises(ConfigError, match="dim"):
        load_config(path)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(neg_aggregate="median")
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)


def test_config_hash_is_stable_and_sensitive():
    a = TrainConfig()
    b = TrainConfig()
    c = TrainConfig(lr=2e-3)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


# ---------------------------------------------------------------------------
# instance generation


def test_chain_instance_uses_grandparent():
    g = graph(["r", "p", "c"], [("r", "p"), ("p", "c")])
    instances = generate_instances(g, n_negatives=1, rng_seed=0)
    by_child = {i.child: i for i in instances}
    assert len(instances) == 2
    assert by_child["c"].parent == "p"
    assert by_child["c"].negatives == ("r",)


def test_family_negatives_cover_whole_pool():
    g = family()
    instances = generate_instances(g, n_negatives=4, rng_seed=1)
    by_child = {i.child: i for i in instances}
    assert set(by_child["c"].negatives) == {"s", "u", "k", "r"}


def test_deep_chain_tops_up_with_far_ancestor():
    g = graph(["a", "b", "c", "d"], [("a", "b"), ("b", "c"), ("c", "d")])
    instances = generate_instances(g, n_negatives=2, rng_seed=0)
    by_child = {i.child: i for i in instances}
    # pool of d is just the grandparent; the top-up bans only the child, its
    # parents, and its descendants, so the great-grandparent qualifies
    assert by_child["d"].negatives == ("b", "a")


def test_exclude_ancestors_narrows_the_top_up():
    g = graph(["a", "b", "c", "d"], [("a", "b"), ("b", "c"), ("c", "d")])
    instances = generate_instances(g, n_negatives=2, rng_seed=0, exclude_ancestors=True)
    by_child = {i.child: i for i in instances}
    assert by_child["d"].negatives == ()


def test_uniform_fallback_reaches_distant_nodes():
    g = graph(
        ["r", "a", "b", "x", "w", "y", "z", "q"],
        [("r", "a"), ("r", "b"), ("a", "x"), ("a", "w"), ("b", "y"), ("b", "z"), ("y", "q")],
    )
    instances = generate_instances(g, n_negatives=6, rng_seed=3)
    by_child = {i.child: i for i in instances}
    # pool of x is {w, r, b, y, z}; q is only reachable via the fallback
    assert set(by_child["x"].negatives) == {"w", "r", "b", "y", "z", "q"}


def test_negatives_exclude_child_and_parents():
    rng = np.random.default_rng(5)
    for trial in range(10):
        g = small_tree(fanout=int(rng.integers(2, 4)), depth=2)
        for inst in generate_instances(g, n_negatives=5, rng_seed=trial):
            assert inst.child not in inst.negatives
            assert not (set(inst.negatives) & g.parents(inst.child))
            assert len(set(inst.negatives)) == len(inst.negatives)


def test_exclude_ancestors_flag():
    g = graph(["r", "p", "c"], [("r", "p"), ("p", "c")])
    instances = generate_instances(g, n_negatives=1, rng_seed=0, exclude_ancestors=True)
    by_child = {i.child: i for i in instances}
    # grandparent r is an ancestor, and nothing else is eligible
    assert by_child["c"].negatives == ()


def test_instances_deterministic():
    g = small_tree()
    a = generate_instances(g, n_negatives=3, rng_seed=7)
    b = generate_instances(g, n_negatives=3, rng_seed=7)
    assert a == b
    c = generate_instances(g, n_negatives=3, rng_seed=8)
    assert a != c
    assert len(a) == g.num_edges


# ---------------------------------------------------------------------------
# optimizer


def test_optimizer_first_step_size():
    params = [np.array([0.0])]
    grads = [np.array([1.0])]
    state = AdamState.init(params)
    optimizer_step(state, params, grads, lr=0.1)
    assert params[0][0] == pytest.approx(-0.1, abs=1e-8)


def test_optimizer_decoupled_weight_decay():
    params = [np.array([1.0])]
    grads = [np.array([0.0])]
    state = AdamState.init(params)
    optimizer_step(state, params, grads, lr=0.1, weight_decay=0.01)
    assert params[0][0] == pytest.approx(0.999, abs=1e-12)


def test_optimizer_tracks_moments():
    params = [np.zeros(3)]
    state = AdamState.init(params)
    rng = np.random.default_rng(0)
    for _ in range(5):
        optimizer_step(state, params, [rng.normal(size=3)], lr=0.01)
    assert state.t == 5
    assert np.all(state.v[0] > 0.0)


# ---------------------------------------------------------------------------
# training loop


def quick_config(**kw):
    base = dict(dim=8, hidden=16, dropout=0.1, lr=3e-3, batch_size=16, epochs=5,
                negatives=3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_train_decreases_loss():
    g = small_tree(fanout=3, depth=2)
    emb = pseudo_clustered_embeddings(g, dim=16, seed=0)
    params, history = train(quick_config(epochs=12), g, emb)
    assert len(history) == 12
    assert history[-1].loss_total < history[0].loss_total
    assert params.out_dim == 8


def test_train_is_deterministic(tmp_path):
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=12, seed=1)
    cfg = quick_config(epochs=3)
    p1, h1 = train(cfg, g, emb)
    p2, h2 = train(cfg, g, emb)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_params(p1, a)
    save_params(p2, b)
    assert a.read_bytes() == b.read_bytes()
    assert [e.loss_total for e in h1] == [e.loss_total for e in h2]


def test_train_zero_dropout_still_deterministic():
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=12, seed=1)
    cfg = quick_config(dropout=0.0, epochs=2)
    p1, _ = train(cfg, g, emb)
    p2, _ = train(cfg, g, emb)
    assert np.array_equal(p1.w1_c, p2.w1_c)


def test_train_missing_embedding_row_is_named():
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings([i for i in g.ids() if i != "r.1"], dim=8, seed=0)
    with pytest.raises(EmbeddingError, match="r.1"):
        train(quick_config(), g, emb)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises():
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=8, seed=0)
    with pytest.raises(DivergenceError):
        train(quick_config(lr=1e160, epochs=20, dropout=0.0), g, emb)


def test_train_early_stopping_with_validation():
    g = small_tree(fanout=3, depth=2)
    emb = pseudo_clustered_embeddings(g, dim=16, seed=0)
    cfg = quick_config(epochs=30, val_fraction=0.3, patience=2)
    _, history = train(cfg, g, emb)
    assert len(history) < 30
    assert all(e.val_mrr is not None for e in history)


def test_history_round_trip(tmp_path):
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=8, seed=0)
    _, history = train(quick_config(epochs=3), g, emb)
    path = tmp_path / "history.csv"
    save_history(history, path)
    rows = load_history(path)
    assert len(rows) == 3
    assert rows[0]["epoch"] == 1
    assert rows[2]["loss_total"] == pytest.approx(history[2].loss_total)
    assert rows[0]["val_mrr"] is None


def test_train_records_components():
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=8, seed=0)
    _, history = train(quick_config(epochs=2), g, emb)
    e = history[0]
    # components are logged at the weight they enter the total
    parts = e.loss_sym + e.loss_align + e.loss_diverge + e.loss_reg + e.loss_clip
    assert e.loss_total == pytest.approx(parts, rel=1e-9)
    assert e.grad_norm > 0.0
    assert e.seconds >= 0.0


def test_train_zeroed_term_logs_zero():
    g = small_tree(fanout=2, depth=2)
    emb = pseudo_hash_embeddings(g.ids(), dim=8, seed=0)
    _, history = train(quick_config(epochs=1, w_sym=0.0), g, emb)
    assert history[0].loss_sym == 0.0
    assert history[0].loss_align > 0.0


def test_train_halves_loss_within_thirty_epochs():
    g = small_tree(fanout=3, depth=2)
    emb = pseudo_clustered_embeddings(g, dim=64, seed=0)
    cfg = TrainConfig(dim=32, hidden=64, negatives=5, epochs=30, seed=0)
    _, history = train(cfg, g, emb)
    assert history[29].loss_total < 0.5 * history[0].loss_total
