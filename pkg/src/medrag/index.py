"""Nearest-neighbour search over embedded documents.

Exact mode is a full cosine scan and doubles as the ground-truth oracle.
Approximate mode is a small hierarchical navigable-small-world graph
(M=16, ef_construction=200 by default) for corpora where a scan is too
slow; ``auto`` picks exact below 50k vectors.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from . import kernels
from .errors import DomainError

EXACT = "exact"
APPROXIMATE = "approximate"
AUTO_EXACT_LIMIT = 50_000


def _pmid_key(pmid: str):
    return (0, int(pmid)) if pmid.isdigit() else (1, pmid)


class HnswGraph:
    """Navigable small-world graph over unit vectors (similarity = dot)."""

    def __init__(self, dim: int, m: int = 16, ef_construction: int = 200, seed: int = 7):
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.level_mult = 1.0 / math.log(m)
        self.rng = np.random.default_rng(seed)
        self.vectors: list[np.ndarray] = []
        self.levels: list[int] = []
        self.neighbors: list[dict[int, list[int]]] = []
        self.entry: int | None = None
        self.max_level = -1

    def _sim(self, a: int, q: np.ndarray) -> float:
        return float(np.dot(self.vectors[a], q))

    def _search_layer(self, q: np.ndarray, entry: int, ef: int, level: int) -> list[tuple[float, int]]:
        visited = {entry}
        sim = self._sim(entry, q)
        candidates = [(-sim, entry)]
        best: list[tuple[float, int]] = [(sim, entry)]
        while candidates:
            neg, node = heapq.heappop(candidates)
            if -neg < best[0][0] and len(best) >= ef:
                break
            for nb in self.neighbors[node].get(level, []):
                if nb in visited:
                    continue
                visited.add(nb)
                s = self._sim(nb, q)
                if len(best) < ef or s > best[0][0]:
                    heapq.heappush(candidates, (-s, nb))
                    heapq.heappush(best, (s, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted(best, reverse=True)

    def add(self, vec: np.ndarray) -> int:
        idx = len(self.vectors)
        self.vectors.append(vec)
        level = int(-math.log(max(self.rng.random(), 1e-12)) * self.level_mult)
        self.levels.append(level)
        self.neighbors.append({l: [] for l in range(level + 1)})
        if self.entry is None:
            self.entry = idx
            self.max_level = level
            return idx
        cur = self.entry
        for l in range(self.max_level, level, -1):
            cur = self._search_layer(vec, cur, 1, l)[0][1]
        for l in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(vec, cur, self.ef_construction, l)
            limit = self.m0 if l == 0 else self.m
            chosen = [node for _, node in found[:limit]]
            self.neighbors[idx][l] = list(chosen)
            for node in chosen:
                links = self.neighbors[node].setdefault(l, [])
                links.append(idx)
                if len(links) > limit:
                    ranked = sorted(
                        links,
                        key=lambda n: np.dot(self.vectors[node], self.vectors[n]),
                        reverse=True,
                    )
                    self.neighbors[node][l] = ranked[:limit]
            cur = found[0][1]
        if level > self.max_level:
            self.max_level = level
            self.entry = idx
        return idx

    def search(self, q: np.ndarray, k: int, ef_search: int = 100) -> list[tuple[int, float]]:
        if self.entry is None:
            return []
        cur = self.entry
        for l in range(self.max_level, 0, -1):
            cur = self._search_layer(q, cur, 1, l)[0][1]
        found = self._search_layer(q, cur, max(ef_search, k), 0)
        return [(node, sim) for sim, node in found[:k]]


class VectorIndex:
    """pmid-addressed vector index with exact and approximate search."""

    def __init__(
        self,
        dimension: int,
        mode: str = "auto",
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 100,
        seed: int = 7,
    ):
        if mode not in ("auto", EXACT, APPROXIMATE):
            raise DomainError(f"unknown index mode {mode!r}")
        self.dimension = dimension
        self._requested_mode = mode
        self._params = (m, ef_construction, ef_search, seed)
        self._pmids: list[str] = []
        self._vecs: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._graph: HnswGraph | None = None

    def add(self, pmid: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise DomainError(
                f"vector for {pmid} has shape {vector.shape}, expected ({self.dimension},)"
            )
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            raise DomainError(f"zero-norm vector for {pmid}")
        self._pmids.append(pmid)
        self._vecs.append(vector)
        self._matrix = None
        self._graph = None

    def __len__(self) -> int:
        return len(self._pmids)

    @property
    def mode(self) -> str:
        if self._requested_mode != "auto":
            return self._requested_mode
        return EXACT if len(self) <= AUTO_EXACT_LIMIT else APPROXIMATE

    def _ensure_built(self) -> None:
        if self._matrix is None:
            self._matrix = np.vstack(self._vecs)
        if self.mode == APPROXIMATE and self._graph is None:
            m, efc, _, seed = self._params
            graph = HnswGraph(self.dimension, m=m, ef_construction=efc, seed=seed)
            norms = np.linalg.norm(self._matrix, axis=1, keepdims=True)
            unit = self._matrix / norms
            for row in unit:
                graph.add(row)
            self._graph = graph

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k ``(pmid, cosine)`` pairs, most similar first."""
        if k < 1:
            raise DomainError("k must be >= 1")
        if not self._pmids:
            raise DomainError("search on an empty index")
        self._ensure_built()
        query = np.asarray(query, dtype=np.float64)
        k = min(k, len(self))
        if self.mode == EXACT:
            sims = kernels.pairwise_cosine(query[None, :], self._matrix)[0]
            order = sorted(
                range(len(sims)),
                key=lambda i: (-sims[i], _pmid_key(self._pmids[i])),
            )[:k]
            return [(self._pmids[i], float(sims[i])) for i in order]
        qn = float(np.linalg.norm(query))
        if qn == 0.0:
            raise DomainError("zero-norm query vector")
        _, _, ef_search, _ = self._params
        hits = self._graph.search(query / qn, k, ef_search=ef_search)
        hits.sort(key=lambda t: (-t[1], _pmid_key(self._pmids[t[0]])))
        return [(self._pmids[i], float(s)) for i, s in hits]
