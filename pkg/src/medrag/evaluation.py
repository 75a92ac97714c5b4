"""Answer-quality metrics and their two-level macro-aggregation.

One tokenizer (lowercase, non-alphanumeric split) backs every lexical
metric so ROUGE, the token distributions, and the word-vector
similarity all see the same tokens. Divergences use natural log; KLD
smooths q additively (1e-10, renormalized) so support mismatches stay
finite. Aggregation averages per query within a medicine, then across
medicines, with missing values excluded pairwise.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import Corpus
from .embedding import VectorStore, cosine, embed_batch, http_post_json
from .errors import DomainError
from .generation import CONDITION_ORDER, RunRecord

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
KLD_EPSILON = 1e-10

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empties."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def _ngrams(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def _f1(overlap: int, ref_total: int, cand_total: int) -> float:
    if ref_total == 0 or cand_total == 0 or overlap == 0:
        return 0.0
    precision = overlap / cand_total
    recall = overlap / ref_total
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(reference: str, candidate: str, n: int) -> float:
    """F1 over clipped n-gram overlap; 0.0 when either side is empty."""
    if n < 1:
        raise DomainError("n must be >= 1")
    ref = _ngrams(tokenize(reference), n)
    cand = _ngrams(tokenize(candidate), n)
    overlap = sum(min(count, cand.get(gram, 0)) for gram, count in ref.items())
    return _f1(overlap, sum(ref.values()), sum(cand.values()))


def rouge_l(reference: str, candidate: str) -> float:
    """F1 from longest-common-subsequence length over token sequences."""
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref or not cand:
        return 0.0
    vocab: dict[str, int] = {}
    ref_ids = np.array([vocab.setdefault(t, len(vocab)) for t in ref], dtype=np.int64)
    cand_ids = np.array([vocab.setdefault(t, len(vocab)) for t in cand], dtype=np.int64)
    lcs = kernels.lcs_length(ref_ids, cand_ids)
    return _f1(lcs, len(ref), len(cand))


def embedding_similarity(
    reference: str, candidate: str, provider, cache: VectorStore | None = None
) -> dict[str, float]:
    """Cosine and raw dot product of whole-text embeddings."""
    ref_vec, cand_vec = embed_batch(provider, [reference, candidate], cache)
    return {
        "cos": cosine(ref_vec, cand_vec),
        "dot": float(np.dot(ref_vec, cand_vec)),
    }


class FileBackedWordVectors:
    """Per-token vectors from a store keyed by the literal token.

    Tokens absent from the store are out-of-vocabulary and come back as
    zero rows, which the averaging step skips.
    """

    kind = "file"

    def __init__(self, store: VectorStore):
        self.store = store
        self.dimension = store.dimension
        self.model_tag = store.model_tag

    def vectors_for(self, tokens: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dimension), dtype=np.float64)
        for i, tok in enumerate(tokens):
            row = self.store.get_or_none(tok)
            if row is not None:
                out[i] = row
        return out


class HttpWordVectors:
    """Per-token vectors from a model service's /embed endpoint."""

    kind = "http"

    def __init__(self, endpoint: str, model_tag: str, dimension: int, session=None, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.model_tag = model_tag
        self.dimension = dimension
        self.session = session
        self.timeout = timeout

    def vectors_for(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dimension), dtype=np.float64)
        body = http_post_json(
            self.endpoint + "/embed",
            {"model": self.model_tag, "texts": list(tokens)},
            session=self.session,
            timeout=self.timeout,
        )
        vectors = np.asarray(body["vectors"], dtype=np.float64)
        if vectors.shape != (len(tokens), self.dimension):
            raise DomainError(
                f"word-vector service returned shape {vectors.shape}, "
                f"expected {(len(tokens), self.dimension)}"
            )
        return vectors


def _mean_token_vector(text: str, provider) -> np.ndarray | None:
    tokens = tokenize(text)
    if not tokens:
        return None
    vectors = provider.vectors_for(tokens)
    in_vocab = np.linalg.norm(vectors, axis=1) > 0.0
    if not in_vocab.any():
        return None
    return vectors[in_vocab].mean(axis=0)


def vsim(reference: str, candidate: str, provider) -> dict[str, float] | None:
    """Cosine/dot of mean in-vocabulary token vectors; None when a side
    has no in-vocabulary tokens (reported as missing, not zero)."""
    ref_vec = _mean_token_vector(reference, provider)
    cand_vec = _mean_token_vector(candidate, provider)
    if ref_vec is None or cand_vec is None:
        return None
    return {
        "cos": cosine(ref_vec, cand_vec),
        "dot": float(np.dot(ref_vec, cand_vec)),
    }


def token_distribution(text: str) -> dict[str, float]:
    """Relative unigram frequencies; sums to 1."""
    tokens = tokenize(text)
    if not tokens:
        raise DomainError("token distribution of an empty text")
    total = len(tokens)
    counts: dict[str, int] = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    return {tok: count / total for tok, count in counts.items()}


def _xlogx_ratio(p: float, q: float) -> float:
    # 0 * log(0/q) := 0
    if p == 0.0:
        return 0.0
    return p * math.log(p / q)


def jsd(p: dict[str, float], q: dict[str, float]) -> float:
    """Jensen-Shannon divergence, natural log, bounded by ln 2."""
    vocab = set(p) | set(q)
    total = 0.0
    for tok in vocab:
        pi = p.get(tok, 0.0)
        qi = q.get(tok, 0.0)
        mi = 0.5 * (pi + qi)
        total += 0.5 * _xlogx_ratio(pi, mi) + 0.5 * _xlogx_ratio(qi, mi)
    return min(max(total, 0.0), LN2)


def kld(p: dict[str, float], q: dict[str, float], epsilon: float = KLD_EPSILON) -> float:
    """KL(p || q~) with q additively smoothed over the union vocabulary
    and renormalized, so zero-support tokens stay finite."""
    vocab = sorted(set(p) | set(q))
    q_mass = sum(q.get(tok, 0.0) for tok in vocab) + epsilon * len(vocab)
    total = 0.0
    for tok in vocab:
        q_smooth = (q.get(tok, 0.0) + epsilon) / q_mass
        total += _xlogx_ratio(p.get(tok, 0.0), q_smooth)
    return max(total, 0.0)


METRIC_FIELDS = [
    "r1",
    "r2",
    "rl",
    "bert_cos",
    "bert_dot",
    "vsim_cos",
    "vsim_dot",
    "jsd",
    "kld",
]


@dataclass(frozen=True)
class MetricScores:
    r1: float
    r2: float
    rl: float
    bert_cos: float
    bert_dot: float
    vsim_cos: float | None
    vsim_dot: float | None
    jsd: float
    kld: float

    def __post_init__(self):
        for field in fields(self):
            value = getattr(self, field.name)
            if value is not None and not math.isfinite(value):
                raise DomainError(f"{field.name} is not finite: {value}")
        for name in ("r1", "r2", "rl"):
            value = getattr(self, name)
            if not -1e-9 <= value <= 1.0 + 1e-9:
                raise DomainError(f"{name} out of [0, 1]: {value}")
        if not -1e-9 <= self.jsd <= LN2 + 1e-9:
            raise DomainError(f"jsd out of [0, ln 2]: {self.jsd}")
        if self.kld < -1e-9:
            raise DomainError(f"kld negative: {self.kld}")


def score_pair(
    reference: str,
    candidate: str,
    embed_provider,
    embed_cache: VectorStore | None = None,
    wordvec_provider=None,
) -> MetricScores:
    """All metrics for one (reference, candidate) answer pair."""
    emb = embedding_similarity(reference, candidate, embed_provider, embed_cache)
    vs = vsim(reference, candidate, wordvec_provider) if wordvec_provider else None
    return MetricScores(
        r1=rouge_n(reference, candidate, 1),
        r2=rouge_n(reference, candidate, 2),
        rl=rouge_l(reference, candidate),
        bert_cos=emb["cos"],
        bert_dot=emb["dot"],
        vsim_cos=vs["cos"] if vs else None,
        vsim_dot=vs["dot"] if vs else None,
        jsd=jsd(token_distribution(reference), token_distribution(candidate)),
        kld=kld(token_distribution(reference), token_distribution(candidate)),
    )


def macro_average(records: list[tuple[str, MetricScores]]) -> dict[str, float | None]:
    """Mean per medicine, then across medicines, one value per metric.

    A metric missing on some queries is excluded pairwise: the medicine
    mean uses only present values, and medicines with none contribute
    nothing to that metric's outer mean.
    """
    if not records:
        raise DomainError("macro average over no records")
    by_medicine: dict[str, list[MetricScores]] = {}
    for medicine, scores in records:
        by_medicine.setdefault(medicine, []).append(scores)
    out: dict[str, float | None] = {}
    for name in METRIC_FIELDS:
        medicine_means = []
        for scores_list in by_medicine.values():
            values = [
                getattr(s, name) for s in scores_list if getattr(s, name) is not None
            ]
            if values:
                medicine_means.append(sum(values) / len(values))
        out[name] = sum(medicine_means) / len(medicine_means) if medicine_means else None
    return out


@dataclass(frozen=True)
class EvaluationRow:
    medicine_id: int
    model_tag: str
    condition: str
    query_ref: str
    scores: MetricScores


def evaluate_records(
    corpus: Corpus,
    records: Sequence[RunRecord],
    embed_provider,
    embed_cache: VectorStore | None = None,
    wordvec_provider=None,
) -> list[EvaluationRow]:
    """Score every run record against its query's reference answer.

    Queries without a reference answer are skipped — there is nothing
    to compare against. Records whose answer has no tokens are skipped
    too (with a warning): the distributional metrics are undefined on
    an empty token list.
    """
    queries = {q.id: q for q in corpus.sorted_queries()}
    rows = []
    for record in records:
        query = queries.get(record.query_ref)
        if query is None:
            raise DomainError(f"run record references unknown query {record.query_ref}")
        if not query.reference_answer.strip():
            continue
        if not tokenize(record.answer):
            log.warning(
                "skipping %s/%s/%s: answer has no tokens",
                record.query_ref, record.condition, record.model_tag,
            )
            continue
        rows.append(
            EvaluationRow(
                medicine_id=query.medicine_id,
                model_tag=record.model_tag,
                condition=record.condition,
                query_ref=record.query_ref,
                scores=score_pair(
                    query.reference_answer,
                    record.answer,
                    embed_provider,
                    embed_cache,
                    wordvec_provider,
                ),
            )
        )
    return rows


METRICS_CSV_FIELDS = ["model", "condition"] + METRIC_FIELDS

_CONDITION_RANK = {kind.value: i for i, kind in enumerate(CONDITION_ORDER)}


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.10g}"


def aggregate_rows(rows: Sequence[EvaluationRow]) -> list[dict]:
    """One macro-averaged row per (model, condition)."""
    cells: dict[tuple[str, str], list[tuple[str, MetricScores]]] = {}
    for row in rows:
        cells.setdefault((row.model_tag, row.condition), []).append(
            (row.medicine_id, row.scores)
        )
    out = []
    for (model, condition) in sorted(
        cells, key=lambda k: (k[0], _CONDITION_RANK.get(k[1], 99), k[1])
    ):
        means = macro_average(cells[(model, condition)])
        entry = {"model": model, "condition": condition}
        entry.update(means)
        out.append(entry)
    return out


def write_metrics_csv(aggregates: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_FIELDS)
        for row in aggregates:
            writer.writerow(
                [row["model"], row["condition"]]
                + [_fmt(row[name]) for name in METRIC_FIELDS]
            )


def read_metrics_csv(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = {"model": raw["model"], "condition": raw["condition"]}
            for name in METRIC_FIELDS:
                row[name] = float(raw[name]) if raw[name] != "" else None
            out.append(row)
    return out
