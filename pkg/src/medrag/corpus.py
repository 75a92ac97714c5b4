"""Domain types, sentence segmentation, and on-disk persistence.

A corpus ties together medicines, their six consumer questions, and the
per-question abstract pools. On disk it is one UTF-8 JSON record per line,
with a ``kind`` field distinguishing ``medicine`` / ``query`` / ``document``
records.
"""

from __future__ import annotations

import datetime
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from medrag.errors import DomainError

QUERY_SLOTS = (
    "Indications",
    "PreUseWarnings",
    "DrugInteractions",
    "Dosage",
    "OnTreatmentGuidance",
    "AdverseEffects",
)

QUERY_TEMPLATES = {
    "Indications": "Why am I using {name}?",
    "PreUseWarnings": "What should I know before I use {name}?",
    "DrugInteractions": "What if I am taking other medicines with {name}?",
    "Dosage": "How do I use {name}?",
    "OnTreatmentGuidance": "What should I know while using {name}?",
    "AdverseEffects": "Are there any side effects of {name}?",
}

RAW = "raw"
SELECTED = "selected"
MAX_SELECTED = 20


class CorpusError(DomainError):
    """Malformed corpus content or violated integrity constraint."""


@dataclass(frozen=True)
class Medicine:
    """A registered medicine, addressed by its uppercase name and index."""

    name: str
    id: int

    def __post_init__(self):
        if not self.name:
            raise CorpusError("medicine name must be non-empty")
        if self.id < 1:
            raise CorpusError(f"medicine id must be >= 1, got {self.id}")


@dataclass(frozen=True)
class QueryInstance:
    """One consumer question about one medicine.

    ``reference_answer`` may be empty when no ground truth exists; such
    queries are skipped by metric macro-averaging.
    """

    medicine_id: int
    slot: str
    text: str
    reference_answer: str = ""

    def __post_init__(self):
        if self.slot not in QUERY_SLOTS:
            raise CorpusError(f"unknown query slot {self.slot!r}")
        if not self.text:
            raise CorpusError("query text must be non-empty")

    @property
    def id(self) -> str:
        return f"{self.medicine_id}:{self.slot}"


def make_queries(medicine: Medicine, reference_answers: dict[str, str] | None = None):
    """Instantiate the six standard questions for a medicine."""
    answers = reference_answers or {}
    return [
        QueryInstance(
            medicine_id=medicine.id,
            slot=slot,
            text=QUERY_TEMPLATES[slot].format(name=medicine.name),
            reference_answer=answers.get(slot, ""),
        )
        for slot in QUERY_SLOTS
    ]


@dataclass(frozen=True)
class Document:
    """A PubMed abstract with its publication year and citation count."""

    pmid: str
    year: int
    citations: int
    text: str
    query_ref: str = ""
    sentences: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.pmid:
            raise CorpusError("document pmid must be non-empty")
        current = datetime.date.today().year
        if not 1900 <= self.year <= current:
            raise CorpusError(
                f"document {self.pmid}: year {self.year} outside [1900, {current}]"
            )
        if self.citations < 0:
            raise CorpusError(f"document {self.pmid}: negative citation count")
        if not self.text or not self.text.strip():
            raise CorpusError(f"document {self.pmid}: empty abstract text")
        if not self.sentences:
            object.__setattr__(self, "sentences", tuple(segment_sentences(self.text)))


@dataclass
class EvidencePool:
    """The candidate or selected abstract set for one query."""

    query_ref: str
    documents: list[Document]
    stage: str = RAW

    def __post_init__(self):
        if self.stage not in (RAW, SELECTED):
            raise CorpusError(f"unknown pool stage {self.stage!r}")
        pmids = [d.pmid for d in self.documents]
        if len(pmids) != len(set(pmids)):
            raise CorpusError(f"pool {self.query_ref}: duplicate pmids")
        if self.stage == SELECTED and len(self.documents) > MAX_SELECTED:
            raise CorpusError(
                f"pool {self.query_ref}: {len(self.documents)} documents in a "
                f"selected pool (limit {MAX_SELECTED})"
            )


@dataclass
class Corpus:
    """In-memory corpus: medicines, queries, and per-query pools."""

    medicines: dict[int, Medicine] = field(default_factory=dict)
    queries: dict[str, QueryInstance] = field(default_factory=dict)
    pools: dict[str, EvidencePool] = field(default_factory=dict)

    def add_medicine(self, medicine: Medicine) -> None:
        if medicine.id in self.medicines:
            raise CorpusError(f"duplicate medicine id {medicine.id}")
        self.medicines[medicine.id] = medicine

    def add_query(self, query: QueryInstance) -> None:
        if query.medicine_id not in self.medicines:
            raise CorpusError(
                f"query {query.id} refers to unknown medicine {query.medicine_id}"
            )
        if query.id in self.queries:
            raise CorpusError(f"duplicate query {query.id}")
        self.queries[query.id] = query

    def add_document(self, doc: Document, stage: str = RAW) -> None:
        if doc.query_ref not in self.queries:
            raise CorpusError(
                f"document {doc.pmid} refers to unknown query {doc.query_ref}"
            )
        pool = self.pools.get(doc.query_ref)
        if pool is None:
            pool = EvidencePool(query_ref=doc.query_ref, documents=[], stage=stage)
            self.pools[doc.query_ref] = pool
        if any(d.pmid == doc.pmid for d in pool.documents):
            raise CorpusError(
                f"duplicate pmid {doc.pmid} in pool {doc.query_ref}"
            )
        pool.documents.append(doc)
        # Revalidate the pool invariants after mutation.
        EvidencePool(pool.query_ref, pool.documents, pool.stage)

    def sorted_queries(self) -> list[QueryInstance]:
        """Queries in canonical order: medicine id ascending, then slot order."""
        return sorted(
            self.queries.values(),
            key=lambda q: (q.medicine_id, QUERY_SLOTS.index(q.slot)),
        )


# --- sentence segmentation -------------------------------------------------

# Trailing words that end with a period without ending a sentence.
_ABBREVIATIONS = {
    "e.g", "i.e", "vs", "etc", "fig", "figs", "eq", "eqs", "ref", "refs",
    "al", "et al", "approx", "ca", "cf", "dr", "mr", "mrs", "ms", "prof",
    "st", "no", "vol", "pp",
}

_BOUNDARY = re.compile(r"([.?!]+)(\s+)(?=[A-Z0-9])")


def _is_abbreviation(prefix: str) -> bool:
    tail = re.search(r"([A-Za-z][A-Za-z.]*)$", prefix)
    if tail is None:
        return False
    word = tail.group(1).rstrip(".").lower()
    if word in _ABBREVIATIONS:
        return True
    two = re.search(r"(\w+\s+\w+)$", prefix.rstrip("."))
    return bool(two and two.group(1).lower() in _ABBREVIATIONS)


def segment_sentences(text: str) -> list[str]:
    """Split ``text`` into sentences, preserving order and content.

    A boundary is a run of ``.?!`` followed by whitespace and an uppercase
    letter or digit, unless the terminator closes a known abbreviation or
    sits inside a decimal number. Text without any terminator comes back as
    a single element; empty or whitespace-only input yields an empty list.
    """
    stripped = text.strip()
    if not stripped:
        return []

    sentences = []
    start = 0
    for match in _BOUNDARY.finditer(stripped):
        end = match.end(1)
        prefix = stripped[start:end]
        terminator = match.group(1)
        if terminator == "." and _is_abbreviation(stripped[: match.start(1)]):
            continue
        # Decimal guard: a period directly between two digits never splits.
        before = stripped[match.start(1) - 1 : match.start(1)]
        after = stripped[match.end(1) : match.end(1) + 1]
        if terminator == "." and before.isdigit() and after.isdigit():
            continue
        if prefix.strip():
            sentences.append(prefix.strip())
            start = match.end()
    rest = stripped[start:].strip()
    if rest:
        sentences.append(rest)
    return sentences if sentences else [stripped]


# --- persistence -------------------------------------------------------------

def _medicine_record(m: Medicine) -> dict:
    return {"kind": "medicine", "name": m.name, "id": m.id}


def _query_record(q: QueryInstance) -> dict:
    return {
        "kind": "query",
        "medicine_id": q.medicine_id,
        "slot": q.slot,
        "text": q.text,
        "reference_answer": q.reference_answer,
    }


def _document_record(d: Document) -> dict:
    return {
        "kind": "document",
        "pmid": d.pmid,
        "year": d.year,
        "citations": d.citations,
        "text": d.text,
        "query_ref": d.query_ref,
    }


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus as line-delimited records in canonical order."""
    path = Path(path)
    lines = []
    for mid in sorted(corpus.medicines):
        lines.append(_medicine_record(corpus.medicines[mid]))
    for query in corpus.sorted_queries():
        lines.append(_query_record(query))
    for query in corpus.sorted_queries():
        pool = corpus.pools.get(query.id)
        if pool is None:
            continue
        for doc in pool.documents:
            lines.append(_document_record(doc))
    with path.open("w", encoding="utf-8") as fh:
        for record in lines:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, stage: str = RAW) -> Corpus:
    """Load a corpus file, validating schemas and referential integrity."""
    path = Path(path)
    corpus = Corpus()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                kind = record["kind"]
                if kind == "medicine":
                    corpus.add_medicine(Medicine(name=record["name"], id=record["id"]))
                elif kind == "query":
                    corpus.add_query(
                        QueryInstance(
                            medicine_id=record["medicine_id"],
                            slot=record["slot"],
                            text=record["text"],
                            reference_answer=record.get("reference_answer", ""),
                        )
                    )
                elif kind == "document":
                    corpus.add_document(
                        Document(
                            pmid=record["pmid"],
                            year=record["year"],
                            citations=record["citations"],
                            text=record["text"],
                            query_ref=record["query_ref"],
                        ),
                        stage=stage,
                    )
                else:
                    raise CorpusError(f"unknown record kind {kind!r}")
            except KeyError as exc:
                raise CorpusError(
                    f"{path}:{lineno}: missing field {exc.args[0]!r} in {kind!r} record"
                    if "kind" in record
                    else f"{path}:{lineno}: record missing 'kind' field"
                ) from exc
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return corpus


def iter_documents(corpus: Corpus) -> Iterable[tuple[QueryInstance, Document]]:
    """All (query, document) pairs in canonical query order."""
    for query in corpus.sorted_queries():
        pool = corpus.pools.get(query.id)
        if pool is None:
            continue
        for doc in pool.documents:
            yield query, doc
