"""Grounded answer generation under three retrieval conditions.

A context is assembled per (query, condition): the most-similar
condition takes the head of the diversity-aware ranking, the two
contradiction conditions take the salience extremes. The prompt pins
the model to the provided abstracts and to a fixed refusal sentinel;
generation runs at temperature 0 with a 256-token cap, and every cell
is persisted as one JSON line so interrupted experiments resume without
duplicates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

from .contradiction import least_contradictory, most_contradictory
from .corpus import Corpus, Document, EvidencePool
from .embedding import http_post_json
from .errors import ConfigError, DomainError, ProviderLookupError, TransportError
from .ranking import ScoredDocument

log = logging.getLogger(__name__)

SENTINEL = "Insufficient evidence"
TEMPERATURE = 0
MAX_TOKENS = 256


class ConditionKind(str, Enum):
    MOST_SIMILAR = "most_similar"
    MOST_CONTRADICTORY = "most_contradictory"
    LEAST_CONTRADICTORY = "least_contradictory"


CONDITION_ORDER = (
    ConditionKind.MOST_SIMILAR,
    ConditionKind.MOST_CONTRADICTORY,
    ConditionKind.LEAST_CONTRADICTORY,
)


@dataclass(frozen=True)
class RetrievalCondition:
    kind: ConditionKind
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")


def default_conditions(k: int = 5) -> list[RetrievalCondition]:
    return [RetrievalCondition(kind, k) for kind in CONDITION_ORDER]


@dataclass(frozen=True)
class GenerationResult:
    text: str
    truncated: bool = False


@dataclass(frozen=True)
class RunRecord:
    query_ref: str
    condition: str
    model_tag: str
    context_pmids: tuple[str, ...]
    prompt: str
    answer: str
    insufficient: bool
    truncated: bool
    timestamp: str

    def to_json(self) -> str:
        payload = {
            "query_ref": self.query_ref,
            "condition": self.condition,
            "model_tag": self.model_tag,
            "context_pmids": list(self.context_pmids),
            "prompt": self.prompt,
            "answer": self.answer,
            "insufficient": self.insufficient,
            "truncated": self.truncated,
            "timestamp": self.timestamp,
        }
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        raw = json.loads(line)
        return cls(
            query_ref=raw["query_ref"],
            condition=raw["condition"],
            model_tag=raw["model_tag"],
            context_pmids=tuple(raw["context_pmids"]),
            prompt=raw["prompt"],
            answer=raw["answer"],
            insufficient=raw["insufficient"],
            truncated=raw["truncated"],
            timestamp=raw["timestamp"],
        )


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayGenerationProvider:
    """Replays answers recorded in a JSON file, keyed by prompt hash.

    File layout: ``{"model_tag": ..., "answers": {sha256(prompt):
    {"text": ..., "truncated": bool}}}``. An unknown prompt is an
    error so silent drift between record and replay cannot pass.
    """

    kind = "replay"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            raw = json.loads(self.path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"replay file not found: {self.path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"replay file {self.path} is not valid JSON: {exc}") from None
        if "model_tag" not in raw or "answers" not in raw:
            raise ConfigError(f"replay file {self.path} missing model_tag/answers")
        self.model_tag = raw["model_tag"]
        self._answers = raw["answers"]

    def generate(self, prompt: str) -> GenerationResult:
        key = prompt_key(prompt)
        entry = self._answers.get(key)
        if entry is None:
            raise ProviderLookupError(f"no replayed answer for prompt hash {key}")
        return GenerationResult(
            text=entry["text"], truncated=bool(entry.get("truncated", False))
        )


class HttpGenerationProvider:
    """Calls a model service's /generate endpoint at temperature 0."""

    kind = "http"

    def __init__(self, endpoint: str, model_tag: str, session=None, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.model_tag = model_tag
        self.session = session
        self.timeout = timeout

    def generate(self, prompt: str) -> GenerationResult:
        payload = {
            "model": self.model_tag,
            "prompt": prompt,
            "temperature": TEMPERATURE,
            "max_tokens": MAX_TOKENS,
        }
        body = http_post_json(
            self.endpoint + "/generate", payload, session=self.session, timeout=self.timeout
        )
        if "text" not in body:
            raise TransportError("generation service response missing 'text'")
        return GenerationResult(
            text=str(body["text"]), truncated=bool(body.get("truncated", False))
        )


def build_context(
    ranked: Sequence[ScoredDocument],
    saliences: dict[str, float] | None,
    condition: RetrievalCondition,
    docs_by_pmid: dict[str, Document],
) -> list[Document]:
    """Pick the condition's top-k documents from a ranked pool.

    ``ranked`` is already sorted by the combined score, so the
    most-similar condition is its head; the contradiction conditions
    sort by salience and require a contradiction report.
    """
    if not ranked:
        raise DomainError("cannot build a context from an empty ranking")
    if condition.kind is ConditionKind.MOST_SIMILAR:
        pmids = [s.pmid for s in ranked[: condition.k]]
    else:
        if saliences is None:
            raise ConfigError(
                f"condition {condition.kind.value} requires a contradiction report"
            )
        if condition.kind is ConditionKind.MOST_CONTRADICTORY:
            pmids = most_contradictory(saliences, condition.k)
        else:
            pmids = least_contradictory(saliences, condition.k)
    try:
        return [docs_by_pmid[p] for p in pmids]
    except KeyError as exc:
        raise DomainError(f"context pmid {exc.args[0]} not in pool") from None


def _load_template() -> str:
    return (
        resources.files("medrag").joinpath("assets/prompt_template.txt").read_text("utf-8")
    )


def format_context(docs: Sequence[Document]) -> str:
    blocks = []
    for n, doc in enumerate(docs, start=1):
        blocks.append(f"[Abstract {n} | PMID {doc.pmid} | {doc.year}]\n{doc.text}")
    return "\n\n".join(blocks)


def build_prompt(question: str, docs: Sequence[Document], template: str | None = None) -> str:
    """Instruction + numbered abstracts + question, byte-deterministic."""
    if not docs:
        raise DomainError("cannot build a prompt with no context documents")
    if template is None:
        template = _load_template()
    return template.format(context=format_context(docs), question=question)


_TRAILING_PUNCT = ".!?"


def normalize_sentinel(raw: str) -> tuple[str, bool]:
    """Trim an answer and canonicalize refusal variants.

    Case and trailing-punctuation variants of the sentinel (e.g.
    ``" insufficient evidence."``) collapse to the canonical string;
    anything else passes through trimmed.
    """
    text = raw.strip()
    probe = text.casefold().rstrip(_TRAILING_PUNCT).strip()
    if probe == SENTINEL.casefold():
        return SENTINEL, True
    return text, False


def generate(provider, prompt: str) -> tuple[str, bool, bool]:
    """Run one prompt; returns (answer, insufficient, truncated)."""
    result = provider.generate(prompt)
    answer, insufficient = normalize_sentinel(result.text)
    if not answer:
        log.warning("provider %s returned an empty answer", provider.model_tag)
    return answer, insufficient, result.truncated


def _now_iso() -> str:
    # Honouring SOURCE_DATE_EPOCH keeps record files byte-reproducible.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.isoformat()


def load_run_records(path: str | Path) -> list[RunRecord]:
    records = []
    path = Path(path)
    if not path.exists():
        return records
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


def run_experiment(
    corpus: Corpus,
    pools: dict[str, EvidencePool],
    rankings: dict[str, list[ScoredDocument]],
    saliences: dict[str, dict[str, float]],
    providers: Sequence,
    out_path: str | Path,
    conditions: Sequence[RetrievalCondition] | None = None,
    failures_path: str | Path | None = None,
) -> tuple[list[RunRecord], list[dict]]:
    """One record per (query, condition, model), resumable.

    Cells already present in ``out_path`` are skipped; new records are
    appended in (medicine, slot, condition, model) order. Transport
    failures don't abort the sweep — failed cells are collected and,
    when a failures path is given, written there as JSON.
    """
    if conditions is None:
        conditions = default_conditions()
    out_path = Path(out_path)
    existing = load_run_records(out_path)
    done = {(r.query_ref, r.condition, r.model_tag) for r in existing}
    template = _load_template()
    providers = sorted(providers, key=lambda p: p.model_tag)

    new_records: list[RunRecord] = []
    failures: list[dict] = []
    with out_path.open("a", encoding="utf-8") as fh:
        for query in corpus.sorted_queries():
            if query.id not in rankings or query.id not in pools:
                # A query that ingested zero documents has no cells to run.
                log.warning("query %s has no ranked pool; skipping", query.id)
                continue
            ranked = rankings[query.id]
            pool = pools[query.id]
            docs_by_pmid = {d.pmid: d for d in pool.documents}
            query_saliences = saliences.get(query.id)
            for condition in conditions:
                docs = build_context(ranked, query_saliences, condition, docs_by_pmid)
                prompt = build_prompt(query.text, docs, template)
                for provider in providers:
                    cell = (query.id, condition.kind.value, provider.model_tag)
                    if cell in done:
                        continue
                    try:
                        answer, insufficient, truncated = generate(provider, prompt)
                    except (TransportError, ProviderLookupError) as exc:
                        failures.append(
                            {
                                "query_ref": query.id,
                                "condition": condition.kind.value,
                                "model_tag": provider.model_tag,
                                "error": str(exc),
                            }
                        )
                        continue
                    record = RunRecord(
                        query_ref=query.id,
                        condition=condition.kind.value,
                        model_tag=provider.model_tag,
                        context_pmids=tuple(d.pmid for d in docs),
                        prompt=prompt,
                        answer=answer,
                        insufficient=insufficient,
                        truncated=truncated,
                        timestamp=_now_iso(),
                    )
                    fh.write(record.to_json() + "\n")
                    done.add(cell)
                    new_records.append(record)

    if failures_path is not None and failures:
        Path(failures_path).write_text(
            json.dumps({"failed_cells": failures}, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
    return existing + new_records, failures
