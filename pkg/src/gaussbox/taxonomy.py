"""Concept taxonomies: loading, validation, ancestry queries, and leaf holdout.

A taxonomy is a finite acyclic graph of concepts where edges point from
parent to child.  Multiple parents are allowed; cycles, dangling edges, and
duplicate ids are rejected at construction with messages that name the
offending element.  Node and edge files are tab-separated with literal tabs,
newlines, and backslashes escaped inside text fields.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TaxonomyError(ValueError):
    """Structural problem in a taxonomy (bad edge, duplicate, and so on)."""


class ParseError(TaxonomyError):
    """Malformed taxonomy file; message carries path and line number."""


class CycleError(TaxonomyError):
    """Edges form a directed cycle; message shows one witness cycle."""


@dataclass(frozen=True)
class ConceptRecord:
    """One concept: stable id, display surface, optional free-text definition."""

    id: str
    surface: str
    definition: str = ""

    def __post_init__(self) -> None:
        for field_name, value in (("id", self.id), ("surface", self.surface)):
            if not value:
                raise TaxonomyError(f"concept {field_name} must be non-empty")
        if "\t" in self.id or "\n" in self.id:
            raise TaxonomyError(f"concept id {self.id!r} may not contain tabs or newlines")


def escape_field(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_field(text: str, where: str = "") -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(text):
            raise ParseError(f"{where}: dangling escape at end of field")
        nxt = text[i + 1]
        if nxt == "\\":
            out.append("\\")
        elif nxt == "t":
            out.append("\t")
        elif nxt == "n":
            out.append("\n")
        else:
            raise ParseError(f"{where}: unknown escape \\{nxt}")
        i += 2
    return "".join(out)


class TaxonomyGraph:
    """Validated immutable view of a concept taxonomy."""

    def __init__(self, records, edges) -> None:
        self._records: dict[str, ConceptRecord] = {}
        for r in records:
            if r.id in self._records:
                raise TaxonomyError(f"duplicate node id {r.id!r}")
            self._records[r.id] = r
        if not self._records:
            raise TaxonomyError("empty taxonomy: no nodes")

        parents: dict[str, set[str]] = {i: set() for i in self._records}
        children: dict[str, set[str]] = {i: set() for i in self._records}
        seen = set()
        for parent, child in edges:
            if parent not in self._records:
                raise TaxonomyError(f"edge ({parent!r}, {child!r}) references unknown node {parent!r}")
            if child not in self._records:
                raise TaxonomyError(f"edge ({parent!r}, {child!r}) references unknown node {child!r}")
            if (parent, child) in seen:
                raise TaxonomyError(f"duplicate edge ({parent!r}, {child!r})")
            seen.add((parent, child))
            parents[child].add(parent)
            children[parent].add(child)

        self._parents = {i: frozenset(s) for i, s in parents.items()}
        self._children = {i: frozenset(s) for i, s in children.items()}
        self._edges = tuple(sorted(seen))
        self._ids = tuple(sorted(self._records))
        self._check_acyclic()
        self._depth = self._compute_depths()

    def _check_acyclic(self) -> None:
        indeg = {i: len(self._parents[i]) for i in self._ids}
        queue = deque(i for i in self._ids if indeg[i] == 0)
        done = 0
        while queue:
            n = queue.popleft()
            done += 1
            for c in sorted(self._children[n]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if done == len(self._ids):
            return
        # walk parent links inside the unresolved set until a node repeats
        stuck = {i for i in self._ids if indeg[i] > 0}
        node = min(stuck)
        trail: list[str] = []
        pos: dict[str, int] = {}
        while node not in pos:
            pos[node] = len(trail)
            trail.append(node)
            node = min(p for p in self._parents[node] if p in stuck)
        cycle = trail[pos[node]:] + [node]
        arrow = " -> ".join(reversed(cycle))
        raise CycleError(f"taxonomy contains a cycle: {arrow}")

    def _compute_depths(self) -> dict[str, int]:
        depth: dict[str, int] = {}
        queue = deque()
        for r in self.roots():
            depth[r] = 1
            queue.append(r)
        while queue:
            n = queue.popleft()
            for c in sorted(self._children[n]):
                if c not in depth:
                    depth[c] = depth[n] + 1
                    queue.append(c)
        return depth

    # -- basic accessors ----------------------------------------------------

    def ids(self) -> tuple[str, ...]:
        return self._ids

    def has(self, node: str) -> bool:
        return node in self._records

    def record(self, node: str) -> ConceptRecord:
        self._require(node)
        return self._records[node]

    def parents(self, node: str) -> frozenset:
        self._require(node)
        return self._parents[node]

    def children(self, node: str) -> frozenset:
        self._require(node)
        return self._children[node]

    def edges(self) -> tuple:
        return self._edges

    def roots(self) -> tuple[str, ...]:
        return tuple(i for i in self._ids if not self._parents[i])

    def leaves(self) -> tuple[str, ...]:
        return tuple(i for i in self._ids if not self._children[i])

    def is_leaf(self, node: str) -> bool:
        self._require(node)
        return not self._children[node]

    @property
    def num_nodes(self) -> int:
        return len(self._ids)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def _require(self, node: str) -> None:
        if node not in self._records:
            raise TaxonomyError(f"unknown node {node!r}")

    # -- ancestry -----------------------------------------------------------

    def ancestors(self, node: str) -> frozenset:
        """All proper ancestors (parents, their parents, and so on)."""
        self._require(node)
        out: set[str] = set()
        stack = list(self._parents[node])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._parents[n])
        return frozenset(out)

    def descendants(self, node: str) -> frozenset:
        self._require(node)
        out: set[str] = set()
        stack = list(self._children[node])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._children[n])
        return frozenset(out)

    def depth(self, node: str) -> int:
        """Shortest root-to-node distance, counting the root as depth 1."""
        self._require(node)
        return self._depth[node]

    def deepest_common_ancestor(self, a: str, b: str) -> str:
        """Common ancestor of maximal depth; either node may be its own
        ancestor here.  Depth ties break toward the smaller id."""
        common = (self.ancestors(a) | {a}) & (self.ancestors(b) | {b})
        if not common:
            raise TaxonomyError(f"nodes {a!r} and {b!r} share no ancestor")
        return min(common, key=lambda n: (-self._depth[n], n))

    def without_nodes(self, remove) -> "TaxonomyGraph":
        """Copy of the graph with `remove` and their incident edges deleted."""
        remove = set(remove)
        for n in remove:
            self._require(n)
        records = [self._records[i] for i in self._ids if i not in remove]
        edges = [(p, c) for p, c in self._edges if p not in remove and c not in remove]
        return TaxonomyGraph(records, edges)


# ---------------------------------------------------------------------------
# similarity


def wu_palmer(g: TaxonomyGraph, a: str, b: str) -> float:
    """Wu-Palmer similarity: 2 * depth(lca) / (depth(a) + depth(b))."""
    lca = g.deepest_common_ancestor(a, b)
    return 2.0 * g.depth(lca) / (g.depth(a) + g.depth(b))


# ---------------------------------------------------------------------------
# hard negatives


def hard_negative_pool(g: TaxonomyGraph, child: str, exclude_ancestors: bool = False) -> frozenset:
    """Structurally confusable non-parents of `child`.

    Union of siblings, uncles, cousins, and grandparents, minus the child
    itself and its actual parents.  With exclude_ancestors=True, any ancestor
    of the child (grandparents in particular) is dropped as well.
    """
    parents = g.parents(child)
    siblings: set[str] = set()
    for p in parents:
        siblings |= g.children(p)
    grandparents: set[str] = set()
    for p in parents:
        grandparents |= g.parents(p)
    uncles: set[str] = set()
    for gp in grandparents:
        uncles |= g.children(gp)
    uncles -= parents
    cousins: set[str] = set()
    for u in uncles:
        cousins |= g.children(u)

    pool = (siblings | uncles | cousins | grandparents) - {child} - parents
    if exclude_ancestors:
        pool -= g.ancestors(child)
    return frozenset(pool)


# ---------------------------------------------------------------------------
# leaf holdout


@dataclass(frozen=True)
class QueryExample:
    """A held-out node and the parents it should be re-attached to."""

    query: str
    gold_parents: frozenset


@dataclass(frozen=True)
class SplitResult:
    seed: TaxonomyGraph
    queries: tuple
    fraction: float
    rng_seed: int


def split_leaves(g: TaxonomyGraph, fraction: float, rng_seed: int) -> SplitResult:
    """Hold out a fraction of the leaves as attachment queries.

    Only leaves are removed, so every gold parent stays in the seed taxonomy.
    The number held out is fraction * |leaves| rounded half up; selection
    order is a seeded permutation, and a candidate is skipped if it appears
    among the gold parents already chosen (impossible for leaf candidates,
    kept as a guard).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must lie strictly between 0 and 1, got {fraction}")
    leaves = g.leaves()
    target = int(fraction * len(leaves) + 0.5)
    if target == 0:
        raise TaxonomyError(
            f"no leaves selected: fraction {fraction} of {len(leaves)} leaves rounds to zero"
        )

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(leaves))
    chosen: list[str] = []
    gold_union: set[str] = set()
    for idx in order:
        cand = leaves[int(idx)]
        if cand in gold_union:
            continue
        chosen.append(cand)
        gold_union |= g.parents(cand)
        if len(chosen) == target:
            break

    queries = tuple(
        QueryExample(query=q, gold_parents=g.parents(q)) for q in sorted(chosen)
    )
    seed = g.without_nodes(chosen)
    for q in queries:
        for p in q.gold_parents:
            if not seed.has(p):
                raise TaxonomyError(f"gold parent {p!r} lost from the seed taxonomy")
    return SplitResult(seed=seed, queries=queries, fraction=fraction, rng_seed=rng_seed)


def save_split(split: SplitResult, path) -> None:
    lines = [f"# leaf-holdout fraction={split.fraction!r} rng_seed={split.rng_seed}"]
    for q in split.queries:
        lines.append("\t".join([q.query, *sorted(q.gold_parents)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path):
    """Read a holdout manifest; returns (queries, fraction, rng_seed)."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# leaf-holdout "):
        raise ParseError(f"{path}:1: missing leaf-holdout header")
    fraction = None
    rng_seed = None
    for token in lines[0].removeprefix("# leaf-holdout ").split():
        key, _, value = token.partition("=")
        if key == "fraction":
            fraction = float(value)
        elif key == "rng_seed":
            rng_seed = int(value)
    if fraction is None or rng_seed is None:
        raise ParseError(f"{path}:1: header must carry fraction and rng_seed")
    queries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ParseError(f"{path}:{lineno}: expected query and at least one gold parent")
        queries.append(QueryExample(query=parts[0], gold_parents=frozenset(parts[1:])))
    return tuple(queries), fraction, rng_seed


# ---------------------------------------------------------------------------
# node and edge files


def load_taxonomy(nodes_path, edges_path) -> TaxonomyGraph:
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    records = []
    seen_ids = set()
    for lineno, line in enumerate(nodes_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        where = f"{nodes_path}:{lineno}"
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{where}: expected 3 tab-separated fields, got {len(parts)}")
        node_id, surface, definition = parts
        if node_id in seen_ids:
            raise TaxonomyError(f"{where}: duplicate node id {node_id!r}")
        seen_ids.add(node_id)
        try:
            records.append(
                ConceptRecord(
                    id=node_id,
                    surface=unescape_field(surface, where),
                    definition=unescape_field(definition, where),
                )
            )
        except TaxonomyError as e:
            raise type(e)(f"{where}: {e}") from None

    edges = []
    for lineno, line in enumerate(edges_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{edges_path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
        edges.append((parts[0], parts[1]))

    return TaxonomyGraph(records, edges)


def save_taxonomy(g: TaxonomyGraph, nodes_path, edges_path) -> None:
    node_lines = []
    for i in g.ids():
        r = g.record(i)
        node_lines.append("\t".join([r.id, escape_field(r.surface), escape_field(r.definition)]))
    Path(nodes_path).write_text("\n".join(node_lines) + "\n", encoding="utf-8")
    edge_lines = ["\t".join(e) for e in g.edges()]
    text = "\n".join(edge_lines) + "\n" if edge_lines else ""
    Path(edges_path).write_text(text, encoding="utf-8")
