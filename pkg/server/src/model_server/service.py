"""FastAPI application implementing the provider wire protocol.

Endpoints:

* ``POST /embed``    ``{"model", "texts": [...]}`` → ``{"vectors": [[...]]}``
* ``POST /nli``      ``{"model", "pairs": [{"premise", "hypothesis"}]}`` →
  ``{"probs": [{"ent", "neu", "con"}]}``
* ``POST /generate`` ``{"model", "prompt", "temperature", "max_tokens"}`` →
  ``{"text", "truncated", "max_tokens", "clamped"}``
* ``GET /health``    registry listing plus request counters.

Errors: an unregistered tag (or a tag of the wrong capability for the
endpoint) returns 404 with the registered tags for that capability; a
batch above the configured cap returns 413; a generate request with
non-zero temperature is rejected with 422, and ``max_tokens`` above the
256 cap is clamped and flagged in the response rather than rejected.

Requests are handled concurrently, but each model's inference runs
under a per-tag lock; no state is carried between requests.
"""
from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import HashEncoder, HashNli
from .registry import (
    CAP_EMBED,
    CAP_GENERATE,
    CAP_NLI,
    KIND_HASH_ENCODER,
    KIND_HASH_NLI,
    ModelEntry,
    ServiceConfig,
)

MAX_GENERATION_TOKENS = 256
GENERATION_TEMPERATURE = 0.0
_UPSTREAM_TIMEOUT = 120.0


class EmbedRequest(BaseModel):
    model: str
    texts: list[str]


class NliPairBody(BaseModel):
    premise: str
    hypothesis: str


class NliRequest(BaseModel):
    model: str
    pairs: list[NliPairBody]


class GenerateRequest(BaseModel):
    model: str
    prompt: str
    temperature: float = GENERATION_TEMPERATURE
    max_tokens: int = MAX_GENERATION_TOKENS


def _build_backend(tag: str, entry: ModelEntry):
    if entry.kind == KIND_HASH_ENCODER:
        return HashEncoder(tag, entry.dimension)
    if entry.kind == KIND_HASH_NLI:
        return HashNli(tag)
    return None  # proxy entries call upstream per request


def build_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="model-server", docs_url=None, redoc_url=None)
    backends = {tag: _build_backend(tag, entry) for tag, entry in config.models.items()}
    locks = {tag: threading.Lock() for tag in config.models}
    served = {"embed": 0, "nli": 0, "generate": 0}
    app.state.config = config
    app.state.served = served

    def resolve(tag: str, capability: str) -> ModelEntry:
        entry = config.models.get(tag)
        if entry is None or entry.capability != capability:
            raise HTTPException(
                status_code=404,
                detail={
                    "error": f"no {capability} model registered under tag {tag!r}",
                    "registered": config.tags_for(capability),
                },
            )
        return entry

    def check_batch(count: int) -> None:
        if count > config.max_batch:
            raise HTTPException(
                status_code=413,
                detail={
                    "error": f"batch of {count} exceeds the configured cap",
                    "max_batch": config.max_batch,
                },
            )

    @app.post("/embed")
    def embed(request: EmbedRequest):
        resolve(request.model, CAP_EMBED)
        check_batch(len(request.texts))
        backend = backends[request.model]
        with locks[request.model]:
            vectors = backend.encode_batch(request.texts)
        served["embed"] += 1
        # float32 values upcast to float64 for JSON so clients read back
        # exactly what a cache dump would hold.
        return {"vectors": vectors.astype(np.float64).tolist()}

    @app.post("/nli")
    def nli(request: NliRequest):
        resolve(request.model, CAP_NLI)
        check_batch(len(request.pairs))
        backend = backends[request.model]
        pairs = [(p.premise, p.hypothesis) for p in request.pairs]
        with locks[request.model]:
            matrix = backend.prob_batch(pairs).astype(np.float64)
        served["nli"] += 1
        return {
            "probs": [
                {"ent": row[0], "neu": row[1], "con": row[2]}
                for row in matrix.tolist()
            ]
        }

    @app.post("/generate")
    def generate(request: GenerateRequest):
        entry = resolve(request.model, CAP_GENERATE)
        if request.temperature != GENERATION_TEMPERATURE:
            raise HTTPException(
                status_code=422,
                detail=(
                    f"temperature {request.temperature} rejected; this service "
                    f"only serves deterministic generation at temperature 0"
                ),
            )
        if request.max_tokens < 1:
            raise HTTPException(
                status_code=422,
                detail=f"max_tokens must be >= 1, got {request.max_tokens}",
            )
        clamped = request.max_tokens > MAX_GENERATION_TOKENS
        effective = min(request.max_tokens, MAX_GENERATION_TOKENS)

        import requests as _requests

        payload = {
            "model": entry.upstream_model or request.model,
            "prompt": request.prompt,
            "temperature": GENERATION_TEMPERATURE,
            "max_tokens": effective,
        }
        try:
            with locks[request.model]:
                resp = _requests.post(
                    entry.upstream, json=payload, timeout=_UPSTREAM_TIMEOUT
                )
        except _requests.RequestException as exc:
            raise HTTPException(
                status_code=502, detail=f"upstream request failed: {exc!r}"
            ) from None
        if resp.status_code != 200:
            raise HTTPException(
                status_code=502,
                detail=f"upstream returned HTTP {resp.status_code}",
            )
        try:
            body = resp.json()
        except ValueError:
            raise HTTPException(
                status_code=502, detail="upstream response is not JSON"
            ) from None
        if "text" not in body:
            raise HTTPException(
                status_code=502, detail="upstream response missing 'text'"
            )
        served["generate"] += 1
        return {
            "text": str(body["text"]),
            "truncated": bool(body.get("truncated", False)),
            "max_tokens": effective,
            "clamped": clamped,
        }

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "models": [
                {
                    "tag": tag,
                    "kind": entry.kind,
                    "capability": entry.capability,
                    "dimension": entry.served_dimension,
                }
                for tag, entry in sorted(config.models.items())
            ],
            "served": dict(served),
        }

    return app
