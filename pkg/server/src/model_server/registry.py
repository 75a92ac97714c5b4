"""Service configuration: bind address, batch cap, and the model registry.

The registry maps every servable model tag to its backend kind. Tags are
the shared vocabulary between this service and pipeline configs: a
pipeline provider naming ``retrieval-encoder`` works against any server
whose registry resolves that tag, live or via an exported cache.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import NLI_DIMENSION

KIND_HASH_ENCODER = "hash-encoder"
KIND_HASH_NLI = "hash-nli"
KIND_PROXY = "proxy"
_KINDS = (KIND_HASH_ENCODER, KIND_HASH_NLI, KIND_PROXY)

CAP_EMBED = "embed"
CAP_NLI = "nli"
CAP_GENERATE = "generate"

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8000
DEFAULT_MAX_BATCH = 1024

DEFAULT_EMBED_TAG = "retrieval-encoder"
DEFAULT_SCIENTIFIC_TAG = "scientific-encoder"
DEFAULT_NLI_TAG = "nli-scorer"
DEFAULT_WORDVEC_TAG = "word-vectors"


class RegistryError(ValueError):
    """Raised for malformed service configuration."""


@dataclass(frozen=True)
class ModelEntry:
    """One registered model: backend kind plus kind-specific settings."""

    kind: str
    dimension: int | None = None
    upstream: str | None = None
    upstream_model: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise RegistryError(
                f"unknown model kind {self.kind!r}; kinds are {', '.join(_KINDS)}"
            )
        if self.kind == KIND_HASH_ENCODER:
            if self.dimension is None or self.dimension < 1:
                raise RegistryError(
                    f"kind {self.kind!r} needs a positive dimension, got {self.dimension}"
                )
        if self.kind == KIND_HASH_NLI:
            if self.dimension not in (None, NLI_DIMENSION):
                raise RegistryError(
                    f"kind {self.kind!r} has fixed dimension {NLI_DIMENSION}, "
                    f"got {self.dimension}"
                )
        if self.kind == KIND_PROXY and not self.upstream:
            raise RegistryError(f"kind {self.kind!r} needs an upstream endpoint")

    @property
    def capability(self) -> str:
        if self.kind == KIND_HASH_ENCODER:
            return CAP_EMBED
        if self.kind == KIND_HASH_NLI:
            return CAP_NLI
        return CAP_GENERATE

    @property
    def served_dimension(self) -> int | None:
        return NLI_DIMENSION if self.kind == KIND_HASH_NLI else self.dimension


@dataclass(frozen=True)
class ServiceConfig:
    models: dict[str, ModelEntry]
    host: str = DEFAULT_HOST
    port: int = DEFAULT_PORT
    max_batch: int = DEFAULT_MAX_BATCH
    device: str = "cpu"

    def __post_init__(self):
        if not self.models:
            raise RegistryError("service config registers no models")
        if self.max_batch < 1:
            raise RegistryError(f"max_batch must be >= 1, got {self.max_batch}")
        if not (0 < self.port < 65536) and self.port != 0:
            raise RegistryError(f"port out of range: {self.port}")

    def tags_for(self, capability: str) -> list[str]:
        return sorted(
            tag for tag, entry in self.models.items()
            if entry.capability == capability
        )


def default_config() -> ServiceConfig:
    """Registry covering the four provider roles the pipeline consumes."""
    return ServiceConfig(
        models={
            DEFAULT_EMBED_TAG: ModelEntry(kind=KIND_HASH_ENCODER, dimension=384),
            DEFAULT_SCIENTIFIC_TAG: ModelEntry(kind=KIND_HASH_ENCODER, dimension=384),
            DEFAULT_NLI_TAG: ModelEntry(kind=KIND_HASH_NLI),
            DEFAULT_WORDVEC_TAG: ModelEntry(kind=KIND_HASH_ENCODER, dimension=50),
        }
    )


_TOP_KEYS = {"host", "port", "max_batch", "device", "models"}
_MODEL_KEYS = {"kind", "dimension", "upstream", "upstream_model"}


def parse_service_config(raw: dict) -> ServiceConfig:
    if not isinstance(raw, dict):
        raise RegistryError("service config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise RegistryError(f"unknown service config keys: {sorted(unknown)}")
    models_raw = raw.get("models")
    if not isinstance(models_raw, dict) or not models_raw:
        raise RegistryError("service config needs a non-empty 'models' object")
    models: dict[str, ModelEntry] = {}
    for tag, spec in models_raw.items():
        if not isinstance(spec, dict):
            raise RegistryError(f"model {tag!r} must be an object")
        bad = set(spec) - _MODEL_KEYS
        if bad:
            raise RegistryError(f"model {tag!r} has unknown keys: {sorted(bad)}")
        if "kind" not in spec:
            raise RegistryError(f"model {tag!r} is missing 'kind'")
        models[tag] = ModelEntry(
            kind=spec["kind"],
            dimension=spec.get("dimension"),
            upstream=spec.get("upstream"),
            upstream_model=spec.get("upstream_model"),
        )
    return ServiceConfig(
        models=models,
        host=raw.get("host", DEFAULT_HOST),
        port=raw.get("port", DEFAULT_PORT),
        max_batch=raw.get("max_batch", DEFAULT_MAX_BATCH),
        device=raw.get("device", "cpu"),
    )


def load_service_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RegistryError(f"service config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise RegistryError(f"service config {path} is not valid JSON: {exc}") from None
    return parse_service_config(raw)
