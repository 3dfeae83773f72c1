"""Input embedding tables and deterministic pseudo-embedding generators.

The file format is one header line `dim<TAB>k` followed by `id<TAB>v1,...,vk`
rows.  Values are written with shortest round-trip float repr, so a
save/load/save cycle is byte-identical.

Two generators exist for experiments that need no text encoder: hashed
embeddings (independent unit vectors derived from the id alone) and clustered
embeddings (children correlate with their parents, mimicking how a real
encoder places related concepts nearby).
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

# mixing weights for clustered generation: child = parent direction scaled by
# ALPHA plus fresh unit noise scaled by NOISE, renormalized
ALPHA = 0.9
NOISE = 0.44


class EmbeddingError(ValueError):
    """Bad embedding file or table (dims, duplicates, missing rows)."""


class EmbeddingTable:
    """Immutable map from node id to a fixed-dimension float vector."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int) -> None:
        if dim < 1:
            raise EmbeddingError(f"embedding dimension must be at least 1, got {dim}")
        self._dim = int(dim)
        self._vectors: dict[str, np.ndarray] = {}
        for node_id, vec in vectors.items():
            a = np.asarray(vec, dtype=np.float64)
            if a.shape != (self._dim,):
                raise EmbeddingError(
                    f"vector for {node_id!r} has shape {a.shape}, expected ({self._dim},)"
                )
            if not np.all(np.isfinite(a)):
                raise EmbeddingError(f"vector for {node_id!r} contains non-finite values")
            self._vectors[node_id] = a

    @classmethod
    def from_dict(cls, vectors: dict[str, np.ndarray]) -> "EmbeddingTable":
        if not vectors:
            raise EmbeddingError("cannot infer dimension from an empty table")
        dim = len(next(iter(vectors.values())))
        return cls(vectors, dim)

    @property
    def dim(self) -> int:
        return self._dim

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._vectors))

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def vector(self, node_id: str) -> np.ndarray:
        try:
            return self._vectors[node_id]
        except KeyError:
            raise EmbeddingError(f"no embedding row for node {node_id!r}") from None

    def matrix(self, ids) -> np.ndarray:
        """Vectors stacked in the given order, shape (len(ids), dim)."""
        return np.stack([self.vector(i) for i in ids]) if ids else np.zeros((0, self._dim))


def save_embeddings(table: EmbeddingTable, path) -> None:
    lines = [f"dim\t{table.dim}"]
    for node_id in table.ids():
        if "\t" in node_id or "\n" in node_id:
            raise EmbeddingError(f"id {node_id!r} may not contain tabs or newlines")
        vec = table.vector(node_id)
        lines.append(node_id + "\t" + ",".join(repr(float(x)) for x in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path) -> EmbeddingTable:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmbeddingError(f"{path}: empty file, expected a dim header")
    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != "dim":
        raise EmbeddingError(f"{path}:1: malformed header, expected 'dim<TAB>k'")
    try:
        dim = int(header[1])
    except ValueError:
        raise EmbeddingError(f"{path}:1: malformed header dimension {header[1]!r}") from None
    if dim < 1:
        raise EmbeddingError(f"{path}:1: dimension must be at least 1, got {dim}")

    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EmbeddingError(f"{path}:{lineno}: expected 'id<TAB>values'")
        node_id, payload = parts
        if node_id in vectors:
            raise EmbeddingError(f"{path}:{lineno}: duplicate id {node_id!r}")
        fields = payload.split(",")
        if len(fields) != dim:
            raise EmbeddingError(
                f"{path}:{lineno}: row has {len(fields)} values, header says {dim}"
            )
        try:
            vec = np.array([float(x) for x in fields], dtype=np.float64)
        except ValueError:
            raise EmbeddingError(f"{path}:{lineno}: unparseable float value") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"{path}:{lineno}: non-finite value in row {node_id!r}")
        vectors[node_id] = vec
    return EmbeddingTable(vectors, dim)


# ---------------------------------------------------------------------------
# pseudo-embeddings


def _node_rng(node_id: str, seed: int, salt: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{salt}\x1f{seed}\x1f{node_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _check_dim(dim: int) -> None:
    if dim < 2:
        raise ValueError(f"pseudo-embeddings need dimension at least 2, got {dim}")


def pseudo_hash_embeddings(ids, dim: int, seed: int) -> EmbeddingTable:
    """Independent unit vectors derived only from (id, seed).

    Per-id generators are seeded from a hash digest, so results do not depend
    on the order of `ids` and are stable across platforms and runs.
    """
    _check_dim(dim)
    vectors = {}
    for node_id in ids:
        rng = _node_rng(node_id, seed, "hash")
        vectors[node_id] = _unit(rng.standard_normal(dim))
    return EmbeddingTable(vectors, dim)


def _topological_order(graph) -> list[str]:
    # parents strictly before children, smallest ready id first
    import heapq

    indeg = {i: len(graph.parents(i)) for i in graph.ids()}
    ready = [i for i in graph.ids() if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for c in sorted(graph.children(n)):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    return order


def pseudo_clustered_embeddings(graph, dim: int, seed: int) -> EmbeddingTable:
    """Unit vectors where each child leans toward its parents.

    Roots get independent directions; every other node mixes the normalized
    sum of its parents' vectors with per-node noise (weights ALPHA and NOISE)
    and is renormalized.  Noise comes from per-node hashed generators, so the
    result is independent of traversal order.
    """
    _check_dim(dim)
    vectors: dict[str, np.ndarray] = {}
    for node_id in _topological_order(graph):
        rng = _node_rng(node_id, seed, "clustered")
        noise = _unit(rng.standard_normal(dim))
        parents = sorted(graph.parents(node_id))
        if not parents:
            vectors[node_id] = noise
            continue
        direction = _unit(np.sum([vectors[p] for p in parents], axis=0))
        vectors[node_id] = _unit(ALPHA * direction + NOISE * noise)
    return EmbeddingTable(vectors, dim)
