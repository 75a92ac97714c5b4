"""Protocol-level text conventions shared with the pipeline client.

The pipeline keys its caches by content hashes and derives the texts it
will request (document sentences, metric tokens) with fixed rules. For a
cache dump to be a drop-in substitute for live inference, this package
must apply the exact same rules, so they are restated here as part of
the wire/disk contract rather than imported from the client:

* ``text_key``   — sha256 hex of the UTF-8 text (embedding cache keys).
* ``pair_key``   — sha256 hex of ``premise + "\\x1f" + hypothesis``
  (NLI cache keys; the unit separator keeps the pair unambiguous).
* ``tokenize``   — lowercase, split on non-alphanumeric runs.
* ``segment_sentences`` — conservative splitter on ``.?!`` + whitespace +
  capital/digit, with abbreviation and decimal guards.
* ``REFUSAL_TEXT`` — the canonical "no answer" string generators emit;
  evaluation embeds it, so dumps must always cover it.
"""
from __future__ import annotations

import hashlib
import re

REFUSAL_TEXT = "Insufficient evidence"


def text_key(text: str) -> str:
    """Cache key for one text: sha256 hex of its UTF-8 bytes."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def pair_key(premise: str, hypothesis: str) -> str:
    """Cache key for an ordered sentence pair."""
    joined = premise + "\x1f" + hypothesis
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens in order; everything else separates."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


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
