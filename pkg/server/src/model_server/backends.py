"""Deterministic inference backends.

This sandbox ships no encoder weights, so the registered model kinds are
hash-derived stand-ins: every value is a pure function of the model tag
and the input text, which makes serving and cache export reproducible
bit for bit. A weights-backed backend can slot in later behind the same
two-method surface (``dimension``/``encode_batch`` for encoders,
``prob_batch`` for scorers).

Float32 exactness is a hard requirement, not an optimization: the
pipeline client persists cached vectors as float32 but hands callers the
freshly received float64s on first contact. If served values did not
survive a float32 round-trip unchanged, a live run and a dump-backed run
would diverge in the last bits. Backends therefore compute in float64,
round to float32 once, and everything downstream (JSON responses, dump
files) carries exactly those numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .textproc import tokenize

NLI_DIMENSION = 3

# Fixed logits for an identical (s, s) pair: softmax puts ~99.8% mass on
# entailment, so "same sentence entails itself" holds for every input.
_IDENTICAL_PAIR_LOGITS = np.array([3.5, 0.0, -3.5])


def _seed(namespace: str, key: str) -> int:
    digest = hashlib.sha256(f"{namespace}\x1f{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class HashEncoder:
    """Bag-of-words encoder over hash-seeded token directions.

    Each token maps to a fixed Gaussian unit vector seeded from
    ``(model_tag, token)``; a text encodes as the L2-normalized sum of
    its token vectors. Texts without tokens fall back to the direction
    seeded by the empty string so the endpoint stays total.
    """

    def __init__(self, model_tag: str, dimension: int):
        self.model_tag = model_tag
        self.dimension = dimension
        self._directions: dict[str, np.ndarray] = {}

    def _direction(self, token: str) -> np.ndarray:
        cached = self._directions.get(token)
        if cached is None:
            rng = np.random.default_rng(_seed(self.model_tag, token))
            vec = rng.standard_normal(self.dimension)
            cached = vec / np.linalg.norm(vec)
            self._directions[token] = cached
        return cached

    def encode(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return self._direction("").astype(np.float32)
        total = np.zeros(self.dimension)
        for token in tokens:
            total += self._direction(token)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            return self._direction("").astype(np.float32)
        return (total / norm).astype(np.float32)

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension), dtype=np.float32)
        return np.stack([self.encode(t) for t in texts])


class HashNli:
    """Seeded softmax over three logits per ordered sentence pair.

    Logits are Gaussian draws seeded from ``(model_tag, premise,
    hypothesis)``, so swapping the pair changes the result. An identical
    pair uses fixed logits that make entailment the argmax.
    """

    dimension = NLI_DIMENSION

    def __init__(self, model_tag: str):
        self.model_tag = model_tag

    def probs(self, premise: str, hypothesis: str) -> np.ndarray:
        if premise == hypothesis:
            logits = _IDENTICAL_PAIR_LOGITS
        else:
            rng = np.random.default_rng(
                _seed(self.model_tag, premise + "\x1f" + hypothesis)
            )
            logits = rng.normal(0.0, 2.0, NLI_DIMENSION)
        exp = np.exp(logits - logits.max())
        return (exp / exp.sum()).astype(np.float32)

    def prob_batch(self, pairs: list[tuple[str, str]]) -> np.ndarray:
        if not pairs:
            return np.zeros((0, NLI_DIMENSION), dtype=np.float32)
        return np.stack([self.probs(p, h) for p, h in pairs])
