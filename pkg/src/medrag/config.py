"""Pipeline configuration: a JSON file with a strict schema.

Parsing and rendering round-trip exactly, and every artifact written by
the pipeline carries the configuration's content hash so artifacts from
different configurations cannot be silently mixed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .generation import CONDITION_ORDER, ConditionKind
from .pubmed import EFETCH_BATCH_LIMIT

PROVIDER_KINDS = ("file", "http")
GENERATION_KINDS = ("replay", "http")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = "corpus.jsonl"
    cache: str = "cache"
    output: str = "out"

    def __post_init__(self):
        for name in ("corpus", "cache", "output"):
            _require(bool(getattr(self, name)), f"paths.{name} must be non-empty")


@dataclass(frozen=True)
class RankingConfig:
    lam: float = 0.7
    alpha: float = 0.7
    k: int = 5
    epsilon: float = 1e-5

    def __post_init__(self):
        _require(0.0 <= self.lam <= 1.0, f"ranking.lam out of [0, 1]: {self.lam}")
        _require(0.0 <= self.alpha <= 1.0, f"ranking.alpha out of [0, 1]: {self.alpha}")
        _require(self.k >= 1, f"ranking.k must be >= 1: {self.k}")
        _require(self.epsilon > 0.0, f"ranking.epsilon must be positive: {self.epsilon}")


@dataclass(frozen=True)
class SelectionConfig:
    target: int = 20
    year_gap: int = 3

    def __post_init__(self):
        _require(self.target >= 1, f"selection.target must be >= 1: {self.target}")
        _require(self.year_gap >= 1, f"selection.year_gap must be >= 1: {self.year_gap}")


@dataclass(frozen=True)
class ContradictionConfig:
    theta: float = 0.75
    nli_batch: int = 32

    def __post_init__(self):
        _require(0.0 <= self.theta <= 1.0, f"contradiction.theta out of [0, 1]: {self.theta}")
        _require(self.nli_batch >= 1, f"contradiction.nli_batch must be >= 1: {self.nli_batch}")


@dataclass(frozen=True)
class IngestConfig:
    efetch_batch: int = EFETCH_BATCH_LIMIT
    retmax: int = 1000
    language_filter: str = "english[la]"
    max_workers: int = 3

    def __post_init__(self):
        _require(
            1 <= self.efetch_batch <= EFETCH_BATCH_LIMIT,
            f"ingest.efetch_batch out of [1, {EFETCH_BATCH_LIMIT}]: {self.efetch_batch}",
        )
        _require(self.retmax >= 1, f"ingest.retmax must be >= 1: {self.retmax}")
        _require(self.max_workers >= 1, f"ingest.max_workers must be >= 1: {self.max_workers}")


@dataclass(frozen=True)
class GenerationConfig:
    temperature: int = 0
    max_tokens: int = 256

    def __post_init__(self):
        _require(self.temperature == 0, "generation.temperature is fixed at 0")
        _require(
            1 <= self.max_tokens <= 256,
            f"generation.max_tokens out of [1, 256]: {self.max_tokens}",
        )


@dataclass(frozen=True)
class ProviderSpec:
    """Where one model capability comes from: a file store or a service.

    ``dimension`` is only needed for http providers (file stores carry
    it in their manifest).
    """

    kind: str
    model_tag: str
    path: str | None = None
    endpoint: str | None = None
    dimension: int | None = None

    def __post_init__(self):
        _require(bool(self.model_tag), "provider model_tag must be non-empty")
        if self.kind == "file":
            _require(bool(self.path), f"file provider {self.model_tag} needs a path")
        elif self.kind == "http":
            _require(bool(self.endpoint), f"http provider {self.model_tag} needs an endpoint")
        else:
            raise ConfigError(
                f"provider kind {self.kind!r} not one of {PROVIDER_KINDS}"
            )
        if self.dimension is not None:
            _require(self.dimension >= 1, f"provider dimension must be >= 1: {self.dimension}")


@dataclass(frozen=True)
class GenerationProviderSpec:
    kind: str
    model_tag: str
    path: str | None = None
    endpoint: str | None = None

    def __post_init__(self):
        _require(bool(self.model_tag), "generation provider model_tag must be non-empty")
        if self.kind == "replay":
            _require(bool(self.path), f"replay provider {self.model_tag} needs a path")
        elif self.kind == "http":
            _require(
                bool(self.endpoint),
                f"http generation provider {self.model_tag} needs an endpoint",
            )
        else:
            raise ConfigError(
                f"generation provider kind {self.kind!r} not one of {GENERATION_KINDS}"
            )


@dataclass(frozen=True)
class ProvidersConfig:
    embedding: ProviderSpec
    nli: ProviderSpec
    wordvec: ProviderSpec | None
    generation: tuple[GenerationProviderSpec, ...]

    def __post_init__(self):
        _require(len(self.generation) >= 1, "at least one generation provider required")
        tags = [g.model_tag for g in self.generation]
        _require(len(tags) == len(set(tags)), "generation model_tags must be unique")


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    contradiction: ContradictionConfig = field(default_factory=ContradictionConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    providers: ProvidersConfig | None = None
    conditions: tuple[ConditionKind, ...] = CONDITION_ORDER

    def __post_init__(self):
        _require(len(self.conditions) >= 1, "at least one retrieval condition required")
        _require(
            len(set(self.conditions)) == len(self.conditions),
            "retrieval conditions must be unique",
        )


_TOP_KEYS = {
    "paths",
    "ranking",
    "selection",
    "contradiction",
    "ingest",
    "generation",
    "providers",
    "conditions",
}


def _provider_from_dict(raw: dict, which: str) -> ProviderSpec:
    try:
        return ProviderSpec(
            kind=raw["kind"],
            model_tag=raw["model_tag"],
            path=raw.get("path"),
            endpoint=raw.get("endpoint"),
            dimension=raw.get("dimension"),
        )
    except KeyError as exc:
        raise ConfigError(f"providers.{which} missing key {exc.args[0]!r}") from None


def _section(raw: dict, name: str, cls):
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def parse_config(raw: dict) -> PipelineConfig:
    """Validate a parsed JSON object into a PipelineConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")

    providers = None
    if "providers" in raw:
        p = raw["providers"]
        try:
            generation = tuple(
                GenerationProviderSpec(
                    kind=g["kind"],
                    model_tag=g["model_tag"],
                    path=g.get("path"),
                    endpoint=g.get("endpoint"),
                )
                for g in p["generation"]
            )
            providers = ProvidersConfig(
                embedding=_provider_from_dict(p["embedding"], "embedding"),
                nli=_provider_from_dict(p["nli"], "nli"),
                wordvec=(
                    _provider_from_dict(p["wordvec"], "wordvec")
                    if p.get("wordvec")
                    else None
                ),
                generation=generation,
            )
        except KeyError as exc:
            raise ConfigError(f"providers section missing key {exc.args[0]!r}") from None

    conditions = CONDITION_ORDER
    if "conditions" in raw:
        try:
            conditions = tuple(ConditionKind(k) for k in raw["conditions"])
        except ValueError as exc:
            raise ConfigError(f"unknown retrieval condition: {exc}") from None

    return PipelineConfig(
        paths=_section(raw, "paths", PathsConfig),
        ranking=_section(raw, "ranking", RankingConfig),
        selection=_section(raw, "selection", SelectionConfig),
        contradiction=_section(raw, "contradiction", ContradictionConfig),
        ingest=_section(raw, "ingest", IngestConfig),
        generation=_section(raw, "generation", GenerationConfig),
        providers=providers,
        conditions=conditions,
    )


def _spec_dict(spec) -> dict:
    out = {"kind": spec.kind, "model_tag": spec.model_tag}
    if spec.path is not None:
        out["path"] = spec.path
    if spec.endpoint is not None:
        out["endpoint"] = spec.endpoint
    if getattr(spec, "dimension", None) is not None:
        out["dimension"] = spec.dimension
    return out


def render_config(config: PipelineConfig) -> dict:
    """The JSON object form; parse_config(render_config(c)) == c."""
    out: dict = {
        "paths": {
            "corpus": config.paths.corpus,
            "cache": config.paths.cache,
            "output": config.paths.output,
        },
        "ranking": {
            "lam": config.ranking.lam,
            "alpha": config.ranking.alpha,
            "k": config.ranking.k,
            "epsilon": config.ranking.epsilon,
        },
        "selection": {
            "target": config.selection.target,
            "year_gap": config.selection.year_gap,
        },
        "contradiction": {
            "theta": config.contradiction.theta,
            "nli_batch": config.contradiction.nli_batch,
        },
        "ingest": {
            "efetch_batch": config.ingest.efetch_batch,
            "retmax": config.ingest.retmax,
            "language_filter": config.ingest.language_filter,
            "max_workers": config.ingest.max_workers,
        },
        "generation": {
            "temperature": config.generation.temperature,
            "max_tokens": config.generation.max_tokens,
        },
        "conditions": [kind.value for kind in config.conditions],
    }
    if config.providers is not None:
        out["providers"] = {
            "embedding": _spec_dict(config.providers.embedding),
            "nli": _spec_dict(config.providers.nli),
            "wordvec": (
                _spec_dict(config.providers.wordvec)
                if config.providers.wordvec
                else None
            ),
            "generation": [_spec_dict(g) for g in config.providers.generation],
        }
    return out


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(render_config(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration file {path} is not valid JSON: {exc}") from None
    return parse_config(raw)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(render_config(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
