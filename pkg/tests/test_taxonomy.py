"""Taxonomy structure, TSV round-trips, leaf holdout, and ancestry metrics."""

import numpy as np
import pytest

from gaussbox.taxonomy import (
    ConceptRecord,
    CycleError,
    ParseError,
    SplitResult,
    TaxonomyError,
    TaxonomyGraph,
    hard_negative_pool,
    load_split,
    load_taxonomy,
    save_split,
    save_taxonomy,
    split_leaves,
    wu_palmer,
)


def rec(i, surface=None, definition=""):
    return ConceptRecord(id=i, surface=surface or i.upper(), definition=definition)


def graph(ids, edges):
    return TaxonomyGraph([rec(i) for i in ids], edges)


def chain():
    return graph(["a", "b", "c"], [("a", "b"), ("b", "c")])


def family():
    # r -> {p, u}; p -> {c, s}; u -> {k}
    return graph(
        ["r", "p", "u", "c", "s", "k"],
        [("r", "p"), ("r", "u"), ("p", "c"), ("p", "s"), ("u", "k")],
    )


# ---------------------------------------------------------------------------
# structure


def test_chain_structure():
    g = chain()
    assert g.roots() == ("a",)
    assert g.leaves() == ("c",)
    assert g.parents("b") == frozenset({"a"})
    assert g.children("b") == frozenset({"c"})
    assert g.num_nodes == 3 and g.num_edges == 2
    assert g.depth("a") == 1 and g.depth("b") == 2 and g.depth("c") == 3


def test_ancestors_and_descendants_are_proper():
    g = family()
    assert g.ancestors("c") == frozenset({"p", "r"})
    assert g.descendants("r") == frozenset({"p", "u", "c", "s", "k"})
    assert g.descendants("c") == frozenset()
    assert g.ancestors("r") == frozenset()


def test_depth_uses_shortest_path():
    g = graph(["r", "a", "x"], [("r", "a"), ("a", "x"), ("r", "x")])
    assert g.depth("x") == 2


def test_multi_parent_nodes_allowed():
    g = graph(["r", "a", "b", "x"], [("r", "a"), ("r", "b"), ("a", "x"), ("b", "x")])
    assert g.parents("x") == frozenset({"a", "b"})
    assert g.deepest_common_ancestor("a", "b") == "r"


def test_cycle_rejected_with_witness():
    with pytest.raises(CycleError) as e:
        graph(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])
    msg = str(e.value)
    assert "a" in msg and "b" in msg and "c" in msg


def test_self_loop_rejected():
    with pytest.raises(CycleError):
        graph(["a", "b"], [("a", "b"), ("b", "b")])


def test_dangling_edge_rejected():
    with pytest.raises(TaxonomyError, match="ghost"):
        graph(["a", "b"], [("a", "b"), ("a", "ghost")])


def test_duplicate_edge_rejected():
    with pytest.raises(TaxonomyError, match="duplicate"):
        graph(["a", "b"], [("a", "b"), ("a", "b")])


def test_duplicate_node_rejected():
    with pytest.raises(TaxonomyError, match="duplicate"):
        TaxonomyGraph([rec("a"), rec("a")], [])


def test_empty_taxonomy_rejected():
    with pytest.raises(TaxonomyError):
        TaxonomyGraph([], [])


# ---------------------------------------------------------------------------
# similarity


def test_wu_palmer_siblings_under_root():
    g = graph(["r", "x", "y"], [("r", "x"), ("r", "y")])
    assert wu_palmer(g, "x", "y") == pytest.approx(0.5)


def test_wu_palmer_identity():
    g = family()
    for n in ("r", "p", "c"):
        assert wu_palmer(g, n, n) == pytest.approx(1.0)


def test_wu_palmer_parent_child():
    g = graph(["r", "c"], [("r", "c")])
    assert wu_palmer(g, "r", "c") == pytest.approx(2.0 / 3.0)


def test_wu_palmer_cousins():
    g = family()
    # LCA of c and k is r (depth 1), both at depth 3
    assert wu_palmer(g, "c", "k") == pytest.approx(2.0 / 6.0)


def test_wu_palmer_unknown_node():
    with pytest.raises(TaxonomyError, match="nope"):
        wu_palmer(family(), "c", "nope")


def brute_wu_palmer(g, a, b):
    common = (g.ancestors(a) | {a}) & (g.ancestors(b) | {b})
    lca_depth = max(g.depth(n) for n in common)
    return 2.0 * lca_depth / (g.depth(a) + g.depth(b))


def random_dag(rng, n):
    ids = [f"n{i}" for i in range(n)]
    edges = []
    for j in range(1, n):
        for i in rng.choice(j, size=min(j, int(rng.integers(1, 3))), replace=False):
            edges.append((ids[int(i)], ids[j]))
    return graph(ids, sorted(set(edges)))


def test_wu_palmer_matches_brute_force_on_random_dags():
    rng = np.random.default_rng(19)
    for _ in range(30):
        g = random_dag(rng, int(rng.integers(4, 12)))
        ids = g.ids()
        for _ in range(10):
            a, b = rng.choice(len(ids), size=2)
            assert wu_palmer(g, ids[a], ids[b]) == pytest.approx(
                brute_wu_palmer(g, ids[a], ids[b])
            )


# ---------------------------------------------------------------------------
# hard negatives


def test_hard_negative_pool_family_example():
    g = family()
    assert hard_negative_pool(g, "c") == frozenset({"s", "u", "k", "r"})


def test_hard_negative_pool_excluding_ancestors():
    g = family()
    assert hard_negative_pool(g, "c", exclude_ancestors=True) == frozenset({"s", "u", "k"})


def test_hard_negative_pool_child_of_root():
    g = family()
    # p has no grandparents, so only its sibling remains
    assert hard_negative_pool(g, "p") == frozenset({"u"})


def test_hard_negative_pool_never_contains_child_or_parents():
    rng = np.random.default_rng(31)
    for _ in range(40):
        g = random_dag(rng, int(rng.integers(4, 15)))
        for node in g.ids():
            pool = hard_negative_pool(g, node)
            assert node not in pool
            assert not (pool & g.parents(node))


# ---------------------------------------------------------------------------
# leaf holdout


def wide_tree():
    ids = ["r"] + [f"m{i}" for i in range(2)] + [f"l{i}" for i in range(4)]
    edges = [("r", "m0"), ("r", "m1"), ("m0", "l0"), ("m0", "l1"), ("m1", "l2"), ("m1", "l3")]
    return graph(ids, edges)


def test_split_half_of_four_leaves():
    g = wide_tree()
    split = split_leaves(g, fraction=0.5, rng_seed=7)
    assert len(split.queries) == 2
    assert split.seed.num_nodes == g.num_nodes - 2
    for q in split.queries:
        assert g.is_leaf(q.query)
        assert not split.seed.has(q.query)
        assert q.gold_parents == g.parents(q.query)
        for p in q.gold_parents:
            assert split.seed.has(p)


def test_split_is_deterministic_and_seed_sensitive():
    g = wide_tree()
    a = split_leaves(g, fraction=0.5, rng_seed=7)
    b = split_leaves(g, fraction=0.5, rng_seed=7)
    assert [q.query for q in a.queries] == [q.query for q in b.queries]
    picks = {tuple(sorted(q.query for q in split_leaves(g, 0.5, s).queries)) for s in range(12)}
    assert len(picks) > 1


def test_split_fraction_validation():
    g = wide_tree()
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            split_leaves(g, fraction=bad, rng_seed=0)


def test_split_rejects_empty_selection():
    g = chain()  # single leaf; 0.2 of 1 rounds to 0
    with pytest.raises(TaxonomyError, match="no leaves selected"):
        split_leaves(g, fraction=0.2, rng_seed=0)


def test_split_manifest_round_trip(tmp_path):
    g = wide_tree()
    split = split_leaves(g, fraction=0.5, rng_seed=3)
    path = tmp_path / "queries.tsv"
    save_split(split, path)
    queries, fraction, seed = load_split(path)
    assert fraction == 0.5 and seed == 3
    assert [(q.query, q.gold_parents) for q in split.queries] == [
        (q.query, q.gold_parents) for q in queries
    ]


# ---------------------------------------------------------------------------
# file round-trips


def test_taxonomy_file_round_trip(tmp_path):
    records = [
        rec("a", "Root thing"),
        ConceptRecord("b", "has\ttab", "def with\nnewline"),
        ConceptRecord("c", "back\\slash", ""),
    ]
    g = TaxonomyGraph(records, [("a", "b"), ("a", "c")])
    nodes, edges = tmp_path / "nodes.tsv", tmp_path / "edges.tsv"
    save_taxonomy(g, nodes, edges)
    g2 = load_taxonomy(nodes, edges)
    assert g2.ids() == g.ids()
    for i in g.ids():
        assert g2.record(i) == g.record(i)
    assert g2.edges() == g.edges()
    # a second write is byte-identical
    nodes2, edges2 = tmp_path / "n2.tsv", tmp_path / "e2.tsv"
    save_taxonomy(g2, nodes2, edges2)
    assert nodes2.read_bytes() == nodes.read_bytes()
    assert edges2.read_bytes() == edges.read_bytes()


def test_load_reports_line_numbers(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    nodes.write_text("a\tA\t\nb\tB\n")  # second line has 2 fields
    edges.write_text("")
    with pytest.raises(ParseError, match="nodes.tsv:2"):
        load_taxonomy(nodes, edges)


def test_load_reports_duplicate_node_line(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    nodes.write_text("a\tA\t\na\tA2\t\n")
    edges.write_text("")
    with pytest.raises(TaxonomyError, match="duplicate"):
        load_taxonomy(nodes, edges)


def test_load_rejects_bad_edge_shape(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    nodes.write_text("a\tA\t\nb\tB\t\n")
    edges.write_text("a\tb\tc\n")
    with pytest.raises(ParseError, match="edges.tsv:1"):
        load_taxonomy(nodes, edges)
