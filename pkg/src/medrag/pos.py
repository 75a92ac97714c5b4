"""A small perceptron-style part-of-speech tagger with frozen weights.

Each token is scored against every tag by summing per-feature weights
(word identity, suffixes, shape, bias) and the argmax wins. The weight
table ships as a versioned JSON asset so tagging is deterministic and
needs no model download; it is tuned for the consumer-medicine question
style this pipeline feeds it, where the decision that actually matters
is content word vs. function word.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigError

CONTENT_TAGS = frozenset(
    {"NN", "NNS", "NNP", "NNPS", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ"}
)

_WORD = re.compile(r"[A-Za-z0-9]+(?:[-'][A-Za-z0-9]+)*")


def word_tokenize(text: str) -> list[str]:
    """Alphanumeric runs, keeping internal hyphens/apostrophes."""
    return _WORD.findall(text)


@dataclass(frozen=True)
class TaggedToken:
    text: str
    tag: str


def token_features(token: str) -> list[str]:
    lower = token.lower()
    feats = ["b", f"w={lower}"]
    if len(lower) >= 4:
        feats.append(f"suf3={lower[-3:]}")
    if len(lower) >= 3:
        feats.append(f"suf2={lower[-2:]}")
    if token.isdigit():
        feats.append("shape=num")
    elif any(ch.isdigit() for ch in token):
        feats.append("shape=has_digit")
    elif len(token) >= 2 and token.isupper():
        feats.append("shape=allcaps")
    elif token[0].isupper() and token[1:].islower():
        feats.append("shape=cap")
    return feats


class PerceptronTagger:
    def __init__(self, weights_path: str | Path | None = None):
        if weights_path is None:
            raw = (
                resources.files("medrag")
                .joinpath("assets/pos_weights.json")
                .read_text("utf-8")
            )
        else:
            try:
                raw = Path(weights_path).read_text("utf-8")
            except FileNotFoundError:
                raise ConfigError(f"tagger weights not found: {weights_path}") from None
        data = json.loads(raw)
        self.tags: list[str] = data["tags"]
        self.weights: dict[str, dict[str, float]] = data["weights"]

    def tag_token(self, token: str) -> str:
        scores = dict.fromkeys(self.tags, 0.0)
        for feat in token_features(token):
            for tag, weight in self.weights.get(feat, {}).items():
                scores[tag] += weight
        # Deterministic: highest score, alphabetical tag on ties.
        return min(scores, key=lambda t: (-scores[t], t))

    def tag(self, text: str) -> list[TaggedToken]:
        return [TaggedToken(tok, self.tag_token(tok)) for tok in word_tokenize(text)]


@lru_cache(maxsize=1)
def default_tagger() -> PerceptronTagger:
    return PerceptronTagger()
