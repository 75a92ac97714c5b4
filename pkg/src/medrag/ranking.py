"""Diversity-aware ranking: MMR against the whole candidate set plus a
publication-year term.

Per candidate document the score is built in three steps:

* relevance  = cos(query, doc)
* redundancy = max cosine against every *other* candidate (0 for a
  singleton pool)
* mmr        = lambda * relevance - (1 - lambda) * redundancy
* tau        = (year - min_year) / (max_year - min_year + epsilon)
* score      = alpha * mmr + (1 - alpha) * tau

Candidates are re-ranked by score descending, ties broken by pmid
ascending.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .corpus import Document, EvidencePool, QueryInstance
from .errors import DomainError

EPSILON = 1e-5


def _pmid_key(pmid: str):
    return (0, int(pmid)) if pmid.isdigit() else (1, pmid)


@dataclass(frozen=True)
class RankingParams:
    """Trade-off weights for the final score."""

    lam: float = 0.7
    alpha: float = 0.7
    epsilon: float = EPSILON
    k: int = 5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must be in [0, 1], got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epsilon <= 0.0:
            raise DomainError("epsilon must be positive")
        if self.k < 1:
            raise DomainError("k must be >= 1")


@dataclass(frozen=True)
class ScoredDocument:
    pmid: str
    relevance: float
    redundancy: float
    mmr: float
    tau: float
    score: float


def temporal_score(doc: Document, pool: EvidencePool, epsilon: float = EPSILON) -> float:
    """Position of the document's year within the pool's year range, in [0, 1)."""
    if not pool.documents:
        raise DomainError("temporal score over an empty pool")
    years = [d.year for d in pool.documents]
    lo, hi = min(years), max(years)
    return (doc.year - lo) / (hi - lo + epsilon)


def mmr_scores(query_vec: np.ndarray, pool_vecs: np.ndarray, lam: float = 0.7) -> list[float]:
    """Batch MMR for every candidate against the full pool."""
    pool_vecs = np.asarray(pool_vecs, dtype=np.float64)
    if pool_vecs.ndim != 2 or pool_vecs.shape[0] < 1:
        raise DomainError("pool_vecs must be a non-empty 2-D array")
    query_vec = np.asarray(query_vec, dtype=np.float64)
    relevance = kernels.pairwise_cosine(query_vec[None, :], pool_vecs)[0]
    n = pool_vecs.shape[0]
    if n == 1:
        redundancy = np.zeros(1)
    else:
        sims = kernels.pairwise_cosine(pool_vecs, pool_vecs)
        redundancy = kernels.offdiag_rowmax(sims)
    return [
        lam * float(relevance[i]) - (1.0 - lam) * float(redundancy[i])
        for i in range(n)
    ]


def rank(
    query: QueryInstance,
    pool: EvidencePool,
    query_vec: np.ndarray,
    pool_vecs: np.ndarray,
    params: RankingParams = RankingParams(),
) -> list[ScoredDocument]:
    """Score and re-rank a selected pool for one query.

    ``pool_vecs`` rows follow ``pool.documents`` order. The output is a
    permutation of the pool, sorted by score descending.
    """
    docs = pool.documents
    if not docs:
        raise DomainError(f"pool {pool.query_ref} is empty")
    pool_vecs = np.asarray(pool_vecs, dtype=np.float64)
    if pool_vecs.shape[0] != len(docs):
        raise DomainError(
            f"{pool_vecs.shape[0]} vectors for {len(docs)} documents"
        )

    query_vec = np.asarray(query_vec, dtype=np.float64)
    relevance = kernels.pairwise_cosine(query_vec[None, :], pool_vecs)[0]
    if len(docs) == 1:
        redundancy = np.zeros(1)
    else:
        redundancy = kernels.offdiag_rowmax(
            kernels.pairwise_cosine(pool_vecs, pool_vecs)
        )

    scored = []
    for i, doc in enumerate(docs):
        rel = float(relevance[i])
        red = float(redundancy[i])
        mmr = params.lam * rel - (1.0 - params.lam) * red
        tau = temporal_score(doc, pool, params.epsilon)
        score = params.alpha * mmr + (1.0 - params.alpha) * tau
        scored.append(
            ScoredDocument(
                pmid=doc.pmid,
                relevance=rel,
                redundancy=red,
                mmr=mmr,
                tau=tau,
                score=score,
            )
        )
    scored.sort(key=lambda s: (-s.score, _pmid_key(s.pmid)))
    return scored


def top_k_similar(ranked: list[ScoredDocument], k: int) -> list[ScoredDocument]:
    """First ``min(k, len(ranked))`` entries of a ranking."""
    if k < 1:
        raise DomainError("k must be >= 1")
    return list(ranked[:k])


RANKING_CSV_FIELDS = ["query_ref", "pmid", "relevance", "redundancy", "mmr", "tau", "score"]


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_ranking_csv(rankings: dict[str, list[ScoredDocument]], path: str | Path) -> None:
    """Per-query score table, one row per (query, document)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RANKING_CSV_FIELDS)
        for query_ref in sorted(rankings):
            for s in rankings[query_ref]:
                writer.writerow(
                    [
                        query_ref,
                        s.pmid,
                        _fmt(s.relevance),
                        _fmt(s.redundancy),
                        _fmt(s.mmr),
                        _fmt(s.tau),
                        _fmt(s.score),
                    ]
                )


def read_ranking_csv(path: str | Path) -> dict[str, list[ScoredDocument]]:
    rankings: dict[str, list[ScoredDocument]] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rankings.setdefault(row["query_ref"], []).append(
                ScoredDocument(
                    pmid=row["pmid"],
                    relevance=float(row["relevance"]),
                    redundancy=float(row["redundancy"]),
                    mmr=float(row["mmr"]),
                    tau=float(row["tau"]),
                    score=float(row["score"]),
                )
            )
    return rankings
