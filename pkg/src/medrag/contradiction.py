"""Cross-document contradiction scoring.

For an evidence pool, every ordered pair of distinct documents is
compared at sentence level: sentence pairs whose embedding cosine
reaches a threshold become NLI candidates, the directed document score
``cnt`` is the maximum contradiction probability over those candidates
(0.0 when there are none), and a document's salience is the mean of its
outgoing directed scores. Top/bottom-salience slices feed the
contradiction-conditioned retrieval modes.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import Document, EvidencePool
from .embedding import VectorStore, http_post_json
from .errors import DomainError, ProviderLookupError

SENTENCE_THRESHOLD = 0.75
NLI_BATCH = 32
NLI_DIMENSION = 3


def _pmid_key(pmid: str):
    return (0, int(pmid)) if pmid.isdigit() else (1, pmid)


def pair_key(premise: str, hypothesis: str) -> str:
    """Stable cache key for an ordered sentence pair."""
    joined = premise + "\x1f" + hypothesis
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NliProbs:
    """Entailment / neutral / contradiction probabilities for one pair."""

    ent: float
    neu: float
    con: float

    def __post_init__(self):
        total = self.ent + self.neu + self.con
        if min(self.ent, self.neu, self.con) < -1e-9:
            raise DomainError(f"negative NLI probability in {self}")
        if abs(total - 1.0) > 1e-3:
            raise DomainError(f"NLI probabilities sum to {total}, expected 1")

    def as_vector(self) -> np.ndarray:
        return np.array([self.ent, self.neu, self.con], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "NliProbs":
        return cls(ent=float(vec[0]), neu=float(vec[1]), con=float(vec[2]))


NliFn = Callable[[Sequence[tuple[str, str]]], list[NliProbs]]


class FileBackedNliProvider:
    """Serves NLI probabilities from a pre-computed vector store.

    The store has dimension 3 and is keyed by ``pair_key(premise,
    hypothesis)``; a missing pair is an error, not a zero.
    """

    kind = "file"

    def __init__(self, store: VectorStore):
        if store.dimension != NLI_DIMENSION:
            raise DomainError(
                f"NLI store must have dimension {NLI_DIMENSION}, got {store.dimension}"
            )
        self.store = store
        self.model_tag = store.model_tag

    def probs(self, pairs: Sequence[tuple[str, str]]) -> list[NliProbs]:
        out = []
        for premise, hypothesis in pairs:
            key = pair_key(premise, hypothesis)
            try:
                vec = self.store.get(key)
            except ProviderLookupError:
                raise ProviderLookupError(
                    f"no stored NLI result for pair ({premise!r}, {hypothesis!r})"
                ) from None
            out.append(NliProbs.from_vector(vec))
        return out


class HttpNliProvider:
    """Fetches NLI probabilities from a model service over HTTP."""

    kind = "http"

    def __init__(self, endpoint: str, model_tag: str, session=None, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.model_tag = model_tag
        self.session = session
        self.timeout = timeout

    def probs(self, pairs: Sequence[tuple[str, str]]) -> list[NliProbs]:
        payload = {
            "model": self.model_tag,
            "pairs": [{"premise": p, "hypothesis": h} for p, h in pairs],
        }
        body = http_post_json(
            self.endpoint + "/nli", payload, session=self.session, timeout=self.timeout
        )
        probs = body.get("probs")
        if not isinstance(probs, list) or len(probs) != len(pairs):
            raise DomainError(
                f"NLI service returned {0 if not isinstance(probs, list) else len(probs)} "
                f"results for {len(pairs)} pairs"
            )
        return [NliProbs(ent=p["ent"], neu=p["neu"], con=p["con"]) for p in probs]


def make_nli_fn(provider, cache: VectorStore | None = None, batch_size: int = NLI_BATCH) -> NliFn:
    """Wrap a provider with de-duplication, caching and batching.

    The cache is a dimension-3 vector store keyed by ``pair_key``;
    results already present are never re-requested.
    """
    if batch_size < 1:
        raise DomainError("batch_size must be >= 1")
    if cache is not None and cache.dimension != NLI_DIMENSION:
        raise DomainError(
            f"NLI cache must have dimension {NLI_DIMENSION}, got {cache.dimension}"
        )

    def fn(pairs: Sequence[tuple[str, str]]) -> list[NliProbs]:
        keys = [pair_key(p, h) for p, h in pairs]
        resolved: dict[str, NliProbs] = {}
        missing: list[tuple[str, tuple[str, str]]] = []
        seen: set[str] = set()
        for key, pair in zip(keys, pairs):
            if key in seen:
                continue
            seen.add(key)
            if cache is not None:
                try:
                    resolved[key] = NliProbs.from_vector(cache.get(key))
                    continue
                except ProviderLookupError:
                    pass
            missing.append((key, pair))

        fresh: list[tuple[str, NliProbs]] = []
        for start in range(0, len(missing), batch_size):
            chunk = missing[start : start + batch_size]
            results = provider.probs([pair for _, pair in chunk])
            if len(results) != len(chunk):
                raise DomainError(
                    f"provider returned {len(results)} results for {len(chunk)} pairs"
                )
            fresh.extend((key, probs) for (key, _), probs in zip(chunk, results))
        if cache is not None and fresh:
            cache.put_many([(key, probs.as_vector()) for key, probs in fresh])
        resolved.update(fresh)
        return [resolved[key] for key in keys]

    return fn


@dataclass(frozen=True)
class SentencePairEvidence:
    """The strongest contradicting sentence pair for a directed document pair."""

    premise_pmid: str
    premise_index: int
    hypothesis_pmid: str
    hypothesis_index: int
    similarity: float
    con: float


@dataclass(frozen=True)
class ContradictionReport:
    query_ref: str
    saliences: dict[str, float]
    directed: dict[tuple[str, str], float]
    evidence: tuple[SentencePairEvidence, ...]


def candidate_pairs(
    premise_vecs: np.ndarray,
    hypothesis_vecs: np.ndarray,
    theta: float = SENTENCE_THRESHOLD,
) -> list[tuple[int, int, float]]:
    """Sentence index pairs whose cosine reaches ``theta``.

    Rows of the two matrices are sentence embeddings for the premise and
    hypothesis documents respectively.
    """
    premise_vecs = np.asarray(premise_vecs, dtype=np.float64)
    hypothesis_vecs = np.asarray(hypothesis_vecs, dtype=np.float64)
    if premise_vecs.ndim != 2 or hypothesis_vecs.ndim != 2:
        raise DomainError("sentence embeddings must be 2-D arrays")
    sims = kernels.pairwise_cosine(premise_vecs, hypothesis_vecs)
    out = []
    for i in range(sims.shape[0]):
        for j in range(sims.shape[1]):
            sim = float(sims[i, j])
            if sim >= theta:
                out.append((i, j, sim))
    return out


def cnt_score(
    premise_doc: Document,
    hypothesis_doc: Document,
    premise_vecs: np.ndarray,
    hypothesis_vecs: np.ndarray,
    nli: NliFn,
    theta: float = SENTENCE_THRESHOLD,
) -> tuple[float, SentencePairEvidence | None]:
    """Directed document contradiction score.

    Maximum contradiction probability over threshold-passing sentence
    pairs (premise sentences from ``premise_doc``), or 0.0 when no pair
    passes. Also returns the max-achieving pair, if any.
    """
    candidates = candidate_pairs(premise_vecs, hypothesis_vecs, theta)
    if not candidates:
        return 0.0, None
    pairs = [
        (premise_doc.sentences[i], hypothesis_doc.sentences[j])
        for i, j, _ in candidates
    ]
    probs = nli(pairs)
    best_idx = 0
    best_con = probs[0].con
    for idx in range(1, len(probs)):
        if probs[idx].con > best_con:
            best_con = probs[idx].con
            best_idx = idx
    i, j, sim = candidates[best_idx]
    evidence = SentencePairEvidence(
        premise_pmid=premise_doc.pmid,
        premise_index=i,
        hypothesis_pmid=hypothesis_doc.pmid,
        hypothesis_index=j,
        similarity=sim,
        con=best_con,
    )
    return best_con, evidence


def pool_contradictions(
    pool: EvidencePool,
    sentence_vecs: dict[str, np.ndarray],
    nli: NliFn,
    theta: float = SENTENCE_THRESHOLD,
) -> ContradictionReport:
    """Directed scores and per-document salience for a whole pool.

    ``sentence_vecs`` maps pmid to a matrix whose rows follow the
    document's sentence order. NLI candidates from every document pair
    are gathered into one request stream so batching and caching apply
    across the pool.
    """
    docs = pool.documents
    if len(docs) < 2:
        raise DomainError(
            f"contradiction salience needs at least 2 documents, pool {pool.query_ref} has {len(docs)}"
        )
    for doc in docs:
        if doc.pmid not in sentence_vecs:
            raise DomainError(f"missing sentence embeddings for pmid {doc.pmid}")
        mat = np.asarray(sentence_vecs[doc.pmid])
        if mat.ndim != 2 or mat.shape[0] != len(doc.sentences):
            raise DomainError(
                f"pmid {doc.pmid}: {mat.shape[0] if mat.ndim == 2 else '?'} sentence "
                f"vectors for {len(doc.sentences)} sentences"
            )

    # Gather candidates for all directed pairs, then resolve NLI in one go.
    per_pair: dict[tuple[str, str], list[tuple[int, int, float]]] = {}
    flat_pairs: list[tuple[str, str]] = []
    flat_slots: list[tuple[tuple[str, str], int]] = []
    for a in docs:
        for b in docs:
            if a.pmid == b.pmid:
                continue
            cands = candidate_pairs(
                sentence_vecs[a.pmid], sentence_vecs[b.pmid], theta
            )
            per_pair[(a.pmid, b.pmid)] = cands
            for idx, (i, j, _) in enumerate(cands):
                flat_pairs.append((a.sentences[i], b.sentences[j]))
                flat_slots.append(((a.pmid, b.pmid), idx))

    probs = nli(flat_pairs) if flat_pairs else []
    per_pair_probs: dict[tuple[str, str], list[float]] = {
        key: [0.0] * len(cands) for key, cands in per_pair.items()
    }
    for (key, idx), p in zip(flat_slots, probs):
        per_pair_probs[key][idx] = p.con

    by_pmid = {d.pmid: d for d in docs}
    directed: dict[tuple[str, str], float] = {}
    evidence: list[SentencePairEvidence] = []
    for key, cands in per_pair.items():
        if not cands:
            directed[key] = 0.0
            continue
        cons = per_pair_probs[key]
        best_idx = max(range(len(cons)), key=lambda k: cons[k])
        directed[key] = cons[best_idx]
        i, j, sim = cands[best_idx]
        evidence.append(
            SentencePairEvidence(
                premise_pmid=key[0],
                premise_index=i,
                hypothesis_pmid=key[1],
                hypothesis_index=j,
                similarity=sim,
                con=cons[best_idx],
            )
        )

    saliences = {}
    for doc in docs:
        outgoing = [directed[(doc.pmid, other.pmid)] for other in docs if other.pmid != doc.pmid]
        saliences[doc.pmid] = float(np.mean(outgoing))
    evidence.sort(key=lambda e: (_pmid_key(e.premise_pmid), _pmid_key(e.hypothesis_pmid)))
    return ContradictionReport(
        query_ref=pool.query_ref,
        saliences=saliences,
        directed=directed,
        evidence=tuple(evidence),
    )


def salience_mean(directed_scores: Iterable[float]) -> float:
    """Mean of a document's outgoing directed scores."""
    scores = list(directed_scores)
    if not scores:
        raise DomainError("salience over an empty score list")
    return float(np.mean(scores))


def most_contradictory(saliences: dict[str, float], k: int) -> list[str]:
    """Top ``min(k, n)`` pmids by salience descending, pmid ascending on ties."""
    if k < 1:
        raise DomainError("k must be >= 1")
    ordered = sorted(saliences, key=lambda p: (-saliences[p], _pmid_key(p)))
    return ordered[:k]


def least_contradictory(saliences: dict[str, float], k: int) -> list[str]:
    """Bottom ``min(k, n)`` pmids by salience ascending, pmid ascending on ties."""
    if k < 1:
        raise DomainError("k must be >= 1")
    ordered = sorted(saliences, key=lambda p: (saliences[p], _pmid_key(p)))
    return ordered[:k]


CONTRADICTION_CSV_FIELDS = ["query_ref", "pmid", "salience"]
PAIR_CSV_FIELDS = [
    "query_ref",
    "premise_pmid",
    "hypothesis_pmid",
    "cnt",
    "premise_index",
    "hypothesis_index",
    "similarity",
]


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_contradiction_csv(reports: dict[str, ContradictionReport], path: str | Path) -> None:
    """Per-document salience table across all queries."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONTRADICTION_CSV_FIELDS)
        for query_ref in sorted(reports):
            report = reports[query_ref]
            for pmid in sorted(report.saliences, key=_pmid_key):
                writer.writerow([query_ref, pmid, _fmt(report.saliences[pmid])])


def write_pair_csv(reports: dict[str, ContradictionReport], path: str | Path) -> None:
    """Directed document-pair scores with the max-achieving sentence pair."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIR_CSV_FIELDS)
        for query_ref in sorted(reports):
            report = reports[query_ref]
            best = {
                (e.premise_pmid, e.hypothesis_pmid): e for e in report.evidence
            }
            for (pp, hp) in sorted(
                report.directed, key=lambda k: (_pmid_key(k[0]), _pmid_key(k[1]))
            ):
                e = best.get((pp, hp))
                writer.writerow(
                    [
                        query_ref,
                        pp,
                        hp,
                        _fmt(report.directed[(pp, hp)]),
                        e.premise_index if e else "",
                        e.hypothesis_index if e else "",
                        _fmt(e.similarity) if e else "",
                    ]
                )


def read_contradiction_csv(path: str | Path) -> dict[str, dict[str, float]]:
    """Salience per pmid, grouped by query."""
    out: dict[str, dict[str, float]] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["query_ref"], {})[row["pmid"]] = float(row["salience"])
    return out
