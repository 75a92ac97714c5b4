"""Cache export: precompute a corpus into file-backed provider dumps.

Given a line-delimited corpus (``kind`` = medicine/query/document
records), this writes three stores a pipeline run can consume instead of
calling the live endpoints:

* ``embed/``   — content-hash keyed vectors for every text the run can
  request: query texts, reference answers, document texts, document
  sentences, the canonical refusal answer, and (via ``--replay``) every
  recorded answer text.
* ``nli/``     — pair-keyed probability triples for every ordered
  cross-document sentence pair within a query's pool. That is a strict
  superset of the pairs any similarity gate admits, so the dump stays
  valid whatever threshold a run uses.
* ``wordvec/`` — literal-keyed per-token vectors over the tokens of all
  texts above.

Exports append-with-skip, so re-running (for example to add replay
answers after a first pass) extends a dump without rewriting rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .backends import NLI_DIMENSION, HashEncoder, HashNli
from .registry import (
    CAP_EMBED,
    CAP_NLI,
    ServiceConfig,
)
from .store import CacheStoreWriter
from .textproc import REFUSAL_TEXT, pair_key, segment_sentences, text_key, tokenize


class ExportError(ValueError):
    """Raised for unusable inputs to a cache export."""


@dataclass(frozen=True)
class CorpusTexts:
    """Texts and sentence groups pulled from one corpus file."""

    query_texts: tuple[str, ...]
    reference_answers: tuple[str, ...]
    document_texts: tuple[str, ...]
    # Per query_ref, in file order: each document's sentence tuple.
    pools: dict[str, list[tuple[str, ...]]]


def read_corpus(path: str | Path) -> CorpusTexts:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ExportError(f"corpus file not found: {path}") from None
    query_texts: list[str] = []
    references: list[str] = []
    doc_texts: list[str] = []
    pools: dict[str, list[tuple[str, ...]]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        kind = record.get("kind")
        if kind == "medicine":
            continue
        if kind == "query":
            query_texts.append(str(record["text"]))
            reference = str(record.get("reference_answer", ""))
            if reference.strip():
                references.append(reference)
        elif kind == "document":
            text = str(record["text"])
            doc_texts.append(text)
            query_ref = str(record["query_ref"])
            pools.setdefault(query_ref, []).append(tuple(segment_sentences(text)))
        else:
            raise ExportError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return CorpusTexts(
        query_texts=tuple(query_texts),
        reference_answers=tuple(references),
        document_texts=tuple(doc_texts),
        pools=pools,
    )


def read_replay_answers(path: str | Path) -> list[str]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExportError(f"replay file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ExportError(f"replay file {path} is not valid JSON: {exc}") from None
    answers = raw.get("answers")
    if not isinstance(answers, dict):
        raise ExportError(f"replay file {path} has no 'answers' object")
    out = []
    for entry in answers.values():
        if not isinstance(entry, dict) or "text" not in entry:
            raise ExportError(f"replay file {path} has a malformed answer entry")
        out.append(str(entry["text"]))
    return out


def collect_embed_texts(corpus: CorpusTexts, answers: list[str]) -> list[str]:
    """Every text a run can ask the embedding endpoint about, deduplicated.

    Answer texts are covered twice over: as stripped raw text and through
    the always-included canonical refusal, which is what runners collapse
    refusal spellings to before evaluating.
    """
    texts: list[str] = []
    texts.extend(corpus.query_texts)
    texts.extend(corpus.reference_answers)
    for doc_text in corpus.document_texts:
        texts.append(doc_text)
        texts.extend(segment_sentences(doc_text))
    texts.append(REFUSAL_TEXT)
    for answer in answers:
        stripped = answer.strip()
        if stripped:
            texts.append(stripped)
    return list(dict.fromkeys(texts))


def collect_nli_pairs(corpus: CorpusTexts) -> list[tuple[str, str]]:
    """All ordered cross-document sentence pairs, per pool, deduplicated."""
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
    for docs in corpus.pools.values():
        for i, premise_doc in enumerate(docs):
            for j, hypothesis_doc in enumerate(docs):
                if i == j:
                    continue
                for premise in premise_doc:
                    for hypothesis in hypothesis_doc:
                        key = pair_key(premise, hypothesis)
                        if key not in seen:
                            seen.add(key)
                            pairs.append((premise, hypothesis))
    return pairs


def collect_tokens(texts: list[str]) -> list[str]:
    tokens: list[str] = []
    for text in texts:
        tokens.extend(tokenize(text))
    return list(dict.fromkeys(tokens))


def _encoder_entry(config: ServiceConfig, tag: str):
    entry = config.models.get(tag)
    if entry is None:
        raise ExportError(
            f"tag {tag!r} is not registered; embed-capable tags: "
            f"{config.tags_for(CAP_EMBED)}"
        )
    return entry


def export_cache(
    config: ServiceConfig,
    corpus_path: str | Path,
    out_dir: str | Path,
    *,
    replay_paths: list[str | Path] = (),
    embed_tag: str,
    nli_tag: str,
    wordvec_tag: str,
) -> dict[str, int]:
    """Write ``embed/``, ``nli/`` and ``wordvec/`` dumps under ``out_dir``.

    Returns rows added per store (zero everywhere on an up-to-date dump).
    """
    embed_entry = _encoder_entry(config, embed_tag)
    if embed_entry.capability != CAP_EMBED:
        raise ExportError(f"tag {embed_tag!r} is not an embedding model")
    wordvec_entry = _encoder_entry(config, wordvec_tag)
    if wordvec_entry.capability != CAP_EMBED:
        raise ExportError(f"tag {wordvec_tag!r} is not an embedding model")
    nli_entry = config.models.get(nli_tag)
    if nli_entry is None or nli_entry.capability != CAP_NLI:
        raise ExportError(
            f"tag {nli_tag!r} is not an NLI model; registered: "
            f"{config.tags_for(CAP_NLI)}"
        )

    corpus = read_corpus(corpus_path)
    answers: list[str] = []
    for replay_path in replay_paths:
        answers.extend(read_replay_answers(replay_path))

    texts = collect_embed_texts(corpus, answers)
    pairs = collect_nli_pairs(corpus)
    tokens = collect_tokens(texts)

    out_dir = Path(out_dir)
    encoder = HashEncoder(embed_tag, embed_entry.dimension)
    embed_store = CacheStoreWriter.open_or_create(
        out_dir / "embed", embed_entry.dimension, embed_tag
    )
    added_embed = embed_store.put_many(
        [(text_key(t), encoder.encode(t)) for t in texts]
    )

    scorer = HashNli(nli_tag)
    nli_store = CacheStoreWriter.open_or_create(
        out_dir / "nli", NLI_DIMENSION, nli_tag
    )
    added_nli = nli_store.put_many(
        [(pair_key(p, h), scorer.probs(p, h)) for p, h in pairs]
    )

    token_encoder = HashEncoder(wordvec_tag, wordvec_entry.dimension)
    wordvec_store = CacheStoreWriter.open_or_create(
        out_dir / "wordvec", wordvec_entry.dimension, wordvec_tag, key_mode="literal"
    )
    added_wordvec = wordvec_store.put_many(
        [(tok, token_encoder.encode(tok)) for tok in tokens]
    )

    return {
        "embed": added_embed,
        "nli": added_nli,
        "wordvec": added_wordvec,
        "embed_total": len(embed_store),
        "nli_total": len(nli_store),
        "wordvec_total": len(wordvec_store),
    }
