"""Inner-product retrieval over embedding records.

Two modes share one interface: ``exact`` scans every vector, ``approx``
greedily walks a navigable small-world graph built at insertion time. All
ordering is deterministic; equal scores resolve by ascending doc id.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .vecio import EmbeddingRecord, FormatError, read_block, write_block

_ADJ_MAGIC = b"RADJ"
_ADJ_VERSION = 1


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float


@dataclass(frozen=True)
class GraphParams:
    """Construction and search knobs for the approximate graph."""

    degree: int = 16
    construction_beam: int = 100
    query_beam: int = 128

    def __post_init__(self):
        if self.degree < 1 or self.construction_beam < 1 or self.query_beam < 1:
            raise ValueError("graph parameters must be positive")


class VectorIndex:
    """Retrieval index over named vectors, exact or graph-approximate.

    Vectors are stored as the float32 values of the source records and
    scored in float64, so every reported score can be recomputed from the
    stored vector with a single dot product.
    """

    def __init__(
        self,
        records: Sequence[EmbeddingRecord],
        mode: str = "exact",
        params: GraphParams | None = None,
    ):
        if mode not in ("exact", "approx"):
            raise ValueError(f"unknown index mode '{mode}'")
        self.mode = mode
        self.params = params or GraphParams()
        self.ids: list[str] = []
        seen = set()
        rows = []
        dim = None
        for rec in records:
            if rec.id in seen:
                raise ValueError(f"duplicate doc id '{rec.id}'")
            seen.add(rec.id)
            vec = np.asarray(rec.vector, dtype=np.float32).reshape(-1)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"dim mismatch: '{rec.id}' has {vec.shape[0]}, expected {dim}"
                )
            self.ids.append(rec.id)
            rows.append(vec)
        self.dim = dim
        self._matrix = (
            np.stack(rows).astype(np.float64) if rows else np.zeros((0, 0))
        )
        # Lexicographic rank per node, used everywhere ties are broken.
        self._id_rank = np.empty(len(self.ids), dtype=np.intp)
        self._id_rank[np.argsort(np.asarray(self.ids, dtype=object), kind="stable")] = (
            np.arange(len(self.ids))
        )
        self._adjacency: list[list[int]] = []
        self._entry = -1
        if mode == "approx" and self.ids:
            self._build_graph()

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, doc_id: str) -> np.ndarray:
        return self._matrix[self.ids.index(doc_id)]

    # -- graph construction -------------------------------------------------

    def _build_graph(self):
        norms = np.linalg.norm(self._matrix, axis=1)
        self._adjacency = [[] for _ in self.ids]
        self._entry = 0
        for node in range(1, len(self.ids)):
            beam = self._beam_search(
                self._matrix[node],
                ef=self.params.construction_beam,
                limit=node,
            )
            neighbors = beam[: self.params.degree]
            self._adjacency[node] = list(neighbors)
            for nb in neighbors:
                self._adjacency[nb].append(node)
            if norms[node] > norms[self._entry]:
                self._entry = node

    # -- search --------------------------------------------------------------

    def _beam_search(self, query: np.ndarray, ef: int, limit: int | None = None):
        """Best-first expansion over the graph, batched per frontier sweep.

        ``limit`` restricts the walk to nodes below that ordinal (used
        during construction, when later nodes do not exist yet). Returns
        node ordinals sorted by descending score, ties by id rank.
        """
        n = limit if limit is not None else len(self.ids)
        entry = self._entry if self._entry < n else 0
        visited = np.zeros(n, dtype=bool)
        visited[entry] = True
        beam_nodes = np.array([entry], dtype=np.intp)
        beam_scores = self._matrix[beam_nodes] @ query
        expanded = np.zeros(1, dtype=bool)

        while not expanded.all():
            frontier = beam_nodes[~expanded]
            expanded[:] = True
            fresh = []
            for node in frontier:
                fresh.extend(
                    nb for nb in self._adjacency[node] if nb < n and not visited[nb]
                )
            if not fresh:
                continue
            fresh = np.unique(np.asarray(fresh, dtype=np.intp))
            visited[fresh] = True
            fresh_scores = self._matrix[fresh] @ query

            nodes = np.concatenate([beam_nodes, fresh])
            scores = np.concatenate([beam_scores, fresh_scores])
            flags = np.concatenate([expanded, np.zeros(len(fresh), dtype=bool)])
            order = np.lexsort((self._id_rank[nodes], -scores))[:ef]
            beam_nodes, beam_scores, expanded = (
                nodes[order],
                scores[order],
                flags[order],
            )
        return beam_nodes

    def _validate_query(self, query: np.ndarray, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(query)):
            raise ValueError("non-finite query vector")
        if self.ids and query.shape[0] != self.dim:
            raise ValueError(
                f"query dim {query.shape[0]} does not match index dim {self.dim}"
            )
        return query

    def top_k(self, query: np.ndarray, k: int) -> list[ScoredHit]:
        """The ``k`` highest dot-product documents for one query."""
        query = self._validate_query(query, k)
        if not self.ids:
            return []
        k_eff = min(k, len(self.ids))
        if self.mode == "exact":
            scores = self._matrix @ query
            # Full sort keeps boundary ties correct under the id tie-break.
            order = np.lexsort((self._id_rank, -scores))[:k_eff]
        else:
            beam = self._beam_search(query, ef=max(self.params.query_beam, k_eff))
            order = beam[:k_eff]
        # Report scores recomputed row-by-row so they are reproducible from
        # the stored vectors without any matmul blocking effects.
        return [
            ScoredHit(self.ids[i], float(np.dot(self._matrix[i], query)))
            for i in order
        ]

    def batch_top_k(self, queries: Sequence[np.ndarray], k: int) -> list[list[ScoredHit]]:
        """``top_k`` for each query; parallel when REGEN_THREADS > 1."""
        queries = list(queries)
        workers = _worker_count()
        if workers > 1 and len(queries) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(lambda q: self.top_k(q, k), queries))
        return [self.top_k(q, k) for q in queries]

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Embedding block first, then the adjacency section."""
        if not self.ids:
            raise ValueError("refusing to save an empty index")
        records = [
            EmbeddingRecord(rid, row.astype(np.float32))
            for rid, row in zip(self.ids, self._matrix)
        ]
        with open(path, "wb") as f:
            write_block(f, records)
            f.write(_ADJ_MAGIC)
            f.write(struct.pack("<IB", _ADJ_VERSION, 1 if self.mode == "approx" else 0))
            if self.mode == "approx":
                f.write(
                    struct.pack(
                        "<IIIq",
                        self.params.degree,
                        self.params.construction_beam,
                        self.params.query_beam,
                        self._entry,
                    )
                )
                for neighbors in self._adjacency:
                    f.write(struct.pack("<I", len(neighbors)))
                    f.write(np.asarray(neighbors, dtype="<u4").tobytes())


def _worker_count() -> int:
    raw = os.environ.get("REGEN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_index(
    records: Sequence[EmbeddingRecord],
    mode: str = "exact",
    params: GraphParams | None = None,
) -> VectorIndex:
    return VectorIndex(records, mode=mode, params=params)


def load_index(path: str | Path) -> VectorIndex:
    def take(f, n: int, what: str) -> bytes:
        chunk = f.read(n)
        if len(chunk) != n:
            raise FormatError(f"truncated index file while reading {what}")
        return chunk

    with open(path, "rb") as f:
        records = read_block(f)
        magic = take(f, 4, "adjacency magic")
        if magic != _ADJ_MAGIC:
            raise FormatError(f"bad adjacency magic {magic!r}")
        version, approx = struct.unpack("<IB", take(f, 5, "adjacency header"))
        if version != _ADJ_VERSION:
            raise FormatError(f"unsupported adjacency version {version}")
        if not approx:
            return VectorIndex(records, mode="exact")
        degree, cbeam, qbeam, entry = struct.unpack("<IIIq", take(f, 20, "graph params"))
        index = VectorIndex.__new__(VectorIndex)
        index.mode = "approx"
        index.params = GraphParams(degree, cbeam, qbeam)
        index.ids = [r.id for r in records]
        index.dim = records[0].vector.shape[0]
        index._matrix = np.stack([r.vector for r in records]).astype(np.float64)
        index._id_rank = np.empty(len(index.ids), dtype=np.intp)
        index._id_rank[
            np.argsort(np.asarray(index.ids, dtype=object), kind="stable")
        ] = np.arange(len(index.ids))
        index._entry = entry
        adjacency = []
        for i in range(len(records)):
            (count,) = struct.unpack("<I", take(f, 4, f"adjacency count {i}"))
            row = np.frombuffer(
                take(f, 4 * count, f"adjacency row {i}"), dtype="<u4"
            )
            adjacency.append([int(x) for x in row])
        index._adjacency = adjacency
        if not (0 <= entry < len(records)):
            raise FormatError("entry point out of range")
    return index


def top_k(index: VectorIndex, query: np.ndarray, k: int) -> list[ScoredHit]:
    """Functional form of ``index.top_k``."""
    return index.top_k(query, k)


def batch_top_k(
    index: VectorIndex, queries: Sequence[np.ndarray], k: int
) -> list[list[ScoredHit]]:
    """Functional form of ``index.batch_top_k``."""
    return index.batch_top_k(queries, k)
