"""Stage orchestration with provenance manifests.

Each stage writes its artifacts plus a manifest recording the
configuration hash and the content hashes of its inputs. A stage whose
manifest, inputs, and outputs are all unchanged is skipped; artifacts
produced under a different configuration hash are rejected rather than
silently mixed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import analysis as analysis_mod
from .config import PipelineConfig, ProvidersConfig, config_hash
from .contradiction import (
    ContradictionReport,
    FileBackedNliProvider,
    HttpNliProvider,
    make_nli_fn,
    pool_contradictions,
    read_contradiction_csv,
    write_contradiction_csv,
    write_pair_csv,
)
from .corpus import RAW, SELECTED, Corpus, load_corpus, save_corpus
from .embedding import (
    DEFAULT_DIMENSION,
    FileBackedEmbeddingProvider,
    HttpEmbeddingProvider,
    VectorStore,
    embed_batch,
)
from .errors import (
    ConfigError,
    DomainError,
    TransportError,
    UpstreamMissingError,
)
from .evaluation import (
    FileBackedWordVectors,
    HttpWordVectors,
    aggregate_rows,
    evaluate_records,
    write_metrics_csv,
)
from .generation import (
    HttpGenerationProvider,
    ReplayGenerationProvider,
    RetrievalCondition,
    load_run_records,
    run_experiment,
)
from .pubmed import PubmedClient, ingest_query, load_exclusions
from .ranking import RankingParams, rank, read_ranking_csv, write_ranking_csv
from .selection import select_balanced, year_histogram

log = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "select",
    "embed",
    "rank",
    "contradict",
    "generate",
    "evaluate",
    "analyze",
)
# `run` executes the offline chain; ingest is explicit because it talks
# to live services.
RUN_STAGES = STAGES[1:]

RAW_CORPUS = "raw.jsonl"
SELECTED_CORPUS = "selected.jsonl"
SELECTION_AUDIT = "selection_audit.txt"
EMBED_MANIFEST = "embed_manifest.json"
RANKING_CSV = "ranking.csv"
CONTRADICTION_CSV = "contradiction.csv"
CONTRADICTION_PAIRS_CSV = "contradiction_pairs.csv"
RUN_RECORDS = "run_records.jsonl"
GENERATION_FAILURES = "generation_failures.json"
METRICS_CSV = "metrics.csv"


@dataclass(frozen=True)
class StageResult:
    stage: str
    status: str  # "ran" | "skipped"
    outputs: tuple[Path, ...]


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Pipeline:
    def __init__(self, config: PipelineConfig, base_dir: str | Path = "."):
        self.config = config
        self.base = Path(base_dir)
        self.hash = config_hash(config)
        self.corpus_path = self._resolve(config.paths.corpus)
        self.cache_dir = self._resolve(config.paths.cache)
        self.out_dir = self._resolve(config.paths.output)
        self.manifest_dir = self.out_dir / "manifests"

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base / p

    def _out(self, name: str) -> Path:
        return self.out_dir / name

    # -- manifest & skip machinery ---------------------------------------

    def _manifest_path(self, stage: str) -> Path:
        return self.manifest_dir / f"{stage}.json"

    def _relative(self, path: Path) -> str:
        try:
            return str(path.relative_to(self.base))
        except ValueError:
            return str(path)

    def _write_manifest(self, stage: str, inputs: list[Path], outputs: list[Path]):
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "stage": stage,
            "config_hash": self.hash,
            "inputs": {self._relative(p): _hash_file(p) for p in sorted(inputs)},
            "outputs": [self._relative(p) for p in outputs],
        }
        self._manifest_path(stage).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def _read_manifest(self, stage: str) -> dict | None:
        path = self._manifest_path(stage)
        if not path.exists():
            return None
        return json.loads(path.read_text("utf-8"))

    def _can_skip(self, stage: str, inputs: list[Path], outputs: list[Path]) -> bool:
        manifest = self._read_manifest(stage)
        if manifest is None or manifest.get("config_hash") != self.hash:
            return False
        recorded = manifest.get("inputs", {})
        current = {self._relative(p): _hash_file(p) for p in sorted(inputs)}
        if recorded != current:
            return False
        return all(p.exists() for p in outputs)

    def _require_upstream(self, current: str, upstream: str, artifact: Path):
        manifest = self._read_manifest(upstream)
        if manifest is None or not artifact.exists():
            raise UpstreamMissingError(
                f"stage {current!r} needs {artifact.name} — run the "
                f"{upstream!r} stage first"
            )
        if manifest.get("config_hash") != self.hash:
            raise ConfigError(
                f"{artifact.name} was produced under configuration "
                f"{manifest.get('config_hash', '?')[:12]}…, current is "
                f"{self.hash[:12]}…; refusing to mix artifacts"
            )

    # -- providers ---------------------------------------------------------

    def _providers(self) -> ProvidersConfig:
        if self.config.providers is None:
            raise ConfigError("this stage needs a providers section in the configuration")
        return self.config.providers

    def _embedding_provider(self):
        spec = self._providers().embedding
        if spec.kind == "file":
            return FileBackedEmbeddingProvider(self._resolve(spec.path))
        return HttpEmbeddingProvider(
            spec.endpoint, spec.model_tag, spec.dimension or DEFAULT_DIMENSION
        )

    def _embed_cache(self, provider) -> VectorStore:
        return VectorStore.open_or_create(
            self.cache_dir / "embed_cache",
            dimension=provider.dimension,
            model_tag=provider.model_tag,
        )

    def _nli_fn(self):
        spec = self._providers().nli
        if spec.kind == "file":
            provider = FileBackedNliProvider(VectorStore(self._resolve(spec.path)))
        else:
            provider = HttpNliProvider(spec.endpoint, spec.model_tag)
        cache = VectorStore.open_or_create(
            self.cache_dir / "nli_cache", dimension=3, model_tag=spec.model_tag
        )
        return make_nli_fn(provider, cache, self.config.contradiction.nli_batch)

    def _wordvec_provider(self):
        spec = self._providers().wordvec
        if spec is None:
            return None
        if spec.kind == "file":
            return FileBackedWordVectors(VectorStore(self._resolve(spec.path)))
        if spec.dimension is None:
            raise ConfigError("http word-vector provider needs an explicit dimension")
        return HttpWordVectors(spec.endpoint, spec.model_tag, spec.dimension)

    def _generation_providers(self):
        providers = []
        for spec in self._providers().generation:
            if spec.kind == "replay":
                provider = ReplayGenerationProvider(self._resolve(spec.path))
                if provider.model_tag != spec.model_tag:
                    raise ConfigError(
                        f"replay file {spec.path} is for model "
                        f"{provider.model_tag!r}, config says {spec.model_tag!r}"
                    )
            else:
                provider = HttpGenerationProvider(spec.endpoint, spec.model_tag)
            providers.append(provider)
        return providers

    # -- corpus helpers ------------------------------------------------------

    def _raw_corpus_path(self) -> Path:
        raw = self._out(RAW_CORPUS)
        if self._read_manifest("ingest") is not None and raw.exists():
            return raw
        return self.corpus_path

    def _load_selected(self) -> Corpus:
        return load_corpus(self._out(SELECTED_CORPUS), stage=SELECTED)

    # -- stages ---------------------------------------------------------------

    def run_stage(self, stage: str, **kwargs) -> StageResult:
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; stages are {', '.join(STAGES)}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        return getattr(self, f"_stage_{stage}")(**kwargs)

    def run(self, stages=RUN_STAGES, **kwargs) -> list[StageResult]:
        return [self.run_stage(stage, **kwargs) for stage in stages]

    def _stage_ingest(self) -> StageResult:
        if not self.corpus_path.exists():
            raise UpstreamMissingError(f"corpus file not found: {self.corpus_path}")
        inputs = [self.corpus_path]
        outputs = [self._out(RAW_CORPUS)]
        if self._can_skip("ingest", inputs, outputs):
            return StageResult("ingest", "skipped", tuple(outputs))
        corpus = load_corpus(self.corpus_path, stage=RAW)
        client = PubmedClient(
            cache_dir=self.cache_dir,
            max_workers=self.config.ingest.max_workers,
            language_filter=self.config.ingest.language_filter or None,
            retmax=self.config.ingest.retmax,
        )
        exclusions = load_exclusions()
        fetched = Corpus()
        for medicine in corpus.medicines.values():
            fetched.add_medicine(medicine)
        for query in corpus.sorted_queries():
            fetched.add_query(query)
        for query in corpus.sorted_queries():
            medicine = corpus.medicines[query.medicine_id]
            pool = corpus.pools.get(query.id)
            if pool is not None and pool.documents:
                for doc in pool.documents:
                    fetched.add_document(doc, stage=RAW)
                continue
            pool = ingest_query(client, medicine, query, exclusions)
            for doc in pool.documents:
                fetched.add_document(doc, stage=RAW)
        save_corpus(fetched, self._out(RAW_CORPUS))
        self._write_manifest("ingest", inputs, outputs)
        return StageResult("ingest", "ran", tuple(outputs))

    def _stage_select(self) -> StageResult:
        source = self._raw_corpus_path()
        if not source.exists():
            raise UpstreamMissingError(
                f"corpus file not found: {source} — provide one or run the 'ingest' stage"
            )
        inputs = [source]
        outputs = [self._out(SELECTED_CORPUS), self._out(SELECTION_AUDIT)]
        if self._can_skip("select", inputs, outputs):
            return StageResult("select", "skipped", tuple(outputs))
        corpus = load_corpus(source, stage=RAW)
        selected = Corpus()
        for medicine in corpus.medicines.values():
            selected.add_medicine(medicine)
        for query in corpus.sorted_queries():
            selected.add_query(query)
        audit_lines = []
        for query in corpus.sorted_queries():
            pool = corpus.pools.get(query.id)
            if pool is None or not pool.documents:
                audit_lines.append(f"{query.id}: 0 documents, skipped")
                continue
            chosen = select_balanced(
                pool,
                target=self.config.selection.target,
                gap=self.config.selection.year_gap,
            )
            for doc in chosen.documents:
                selected.add_document(doc, stage=SELECTED)
            histogram = year_histogram(chosen)
            audit_lines.append(
                f"{query.id}: {len(pool.documents)} -> {len(chosen.documents)} documents; "
                + ", ".join(f"{year}:{count}" for year, count in sorted(histogram.items()))
            )
        save_corpus(selected, self._out(SELECTED_CORPUS))
        self._out(SELECTION_AUDIT).write_text(
            "\n".join(audit_lines) + "\n", encoding="utf-8"
        )
        self._write_manifest("select", inputs, outputs)
        return StageResult("select", "ran", tuple(outputs))

    def _stage_embed(self) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("embed", "select", selected_path)
        inputs = [selected_path]
        outputs = [self._out(EMBED_MANIFEST)]
        if self._can_skip("embed", inputs, outputs):
            return StageResult("embed", "skipped", tuple(outputs))
        corpus = self._load_selected()
        provider = self._embedding_provider()
        cache = self._embed_cache(provider)
        texts: list[str] = []
        for query in corpus.sorted_queries():
            texts.append(query.text)
            if query.reference_answer.strip():
                texts.append(query.reference_answer)
            pool = corpus.pools.get(query.id)
            if pool is None:
                continue
            for doc in pool.documents:
                texts.append(doc.text)
                texts.extend(doc.sentences)
        embed_batch(provider, texts, cache)
        manifest = {
            "config_hash": self.hash,
            "model_tag": provider.model_tag,
            "dimension": provider.dimension,
            "n_texts": len(set(texts)),
            "n_vectors": len(cache),
        }
        self._out(EMBED_MANIFEST).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self._write_manifest("embed", inputs, outputs)
        return StageResult("embed", "ran", tuple(outputs))

    def _stage_rank(self) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("rank", "select", selected_path)
        self._require_upstream("rank", "embed", self._out(EMBED_MANIFEST))
        inputs = [selected_path, self._out(EMBED_MANIFEST)]
        outputs = [self._out(RANKING_CSV)]
        if self._can_skip("rank", inputs, outputs):
            return StageResult("rank", "skipped", tuple(outputs))
        corpus = self._load_selected()
        provider = self._embedding_provider()
        cache = self._embed_cache(provider)
        params = RankingParams(
            lam=self.config.ranking.lam,
            alpha=self.config.ranking.alpha,
            epsilon=self.config.ranking.epsilon,
            k=self.config.ranking.k,
        )
        rankings = {}
        for query in corpus.sorted_queries():
            pool = corpus.pools.get(query.id)
            if pool is None or not pool.documents:
                continue
            vectors = embed_batch(
                provider, [query.text] + [d.text for d in pool.documents], cache
            )
            rankings[query.id] = rank(query, pool, vectors[0], vectors[1:], params)
        write_ranking_csv(rankings, self._out(RANKING_CSV))
        self._write_manifest("rank", inputs, outputs)
        return StageResult("rank", "ran", tuple(outputs))

    def _stage_contradict(self) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("contradict", "select", selected_path)
        self._require_upstream("contradict", "embed", self._out(EMBED_MANIFEST))
        inputs = [selected_path, self._out(EMBED_MANIFEST)]
        outputs = [self._out(CONTRADICTION_CSV), self._out(CONTRADICTION_PAIRS_CSV)]
        if self._can_skip("contradict", inputs, outputs):
            return StageResult("contradict", "skipped", tuple(outputs))
        corpus = self._load_selected()
        provider = self._embedding_provider()
        cache = self._embed_cache(provider)
        nli = self._nli_fn()
        theta = self.config.contradiction.theta
        reports: dict[str, ContradictionReport] = {}
        for query in corpus.sorted_queries():
            pool = corpus.pools.get(query.id)
            if pool is None or not pool.documents:
                continue
            if len(pool.documents) < 2:
                # A lone document has nothing to contradict; its salience
                # is zero by convention so downstream conditions still work.
                reports[query.id] = ContradictionReport(
                    query_ref=query.id,
                    saliences={pool.documents[0].pmid: 0.0},
                    directed={},
                    evidence=(),
                )
                continue
            sentence_vecs = {
                doc.pmid: embed_batch(provider, list(doc.sentences), cache)
                for doc in pool.documents
            }
            reports[query.id] = pool_contradictions(pool, sentence_vecs, nli, theta)
        write_contradiction_csv(reports, self._out(CONTRADICTION_CSV))
        write_pair_csv(reports, self._out(CONTRADICTION_PAIRS_CSV))
        self._write_manifest("contradict", inputs, outputs)
        return StageResult("contradict", "ran", tuple(outputs))

    def _stage_generate(self) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("generate", "select", selected_path)
        self._require_upstream("generate", "rank", self._out(RANKING_CSV))
        self._require_upstream("generate", "contradict", self._out(CONTRADICTION_CSV))
        inputs = [selected_path, self._out(RANKING_CSV), self._out(CONTRADICTION_CSV)]
        outputs = [self._out(RUN_RECORDS)]
        if self._can_skip("generate", inputs, outputs):
            return StageResult("generate", "skipped", tuple(outputs))
        corpus = self._load_selected()
        rankings = read_ranking_csv(self._out(RANKING_CSV))
        saliences = read_contradiction_csv(self._out(CONTRADICTION_CSV))
        providers = self._generation_providers()
        conditions = [
            RetrievalCondition(kind, self.config.ranking.k)
            for kind in self.config.conditions
        ]
        _, failures = run_experiment(
            corpus,
            corpus.pools,
            rankings,
            saliences,
            providers,
            self._out(RUN_RECORDS),
            conditions=conditions,
            failures_path=self._out(GENERATION_FAILURES),
        )
        if failures:
            raise TransportError(
                f"{len(failures)} generation cells failed; see "
                f"{self._out(GENERATION_FAILURES)}"
            )
        self._write_manifest("generate", inputs, outputs)
        return StageResult("generate", "ran", tuple(outputs))

    def _stage_evaluate(self) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("evaluate", "select", selected_path)
        self._require_upstream("evaluate", "generate", self._out(RUN_RECORDS))
        inputs = [selected_path, self._out(RUN_RECORDS)]
        outputs = [self._out(METRICS_CSV)]
        if self._can_skip("evaluate", inputs, outputs):
            return StageResult("evaluate", "skipped", tuple(outputs))
        corpus = self._load_selected()
        records = load_run_records(self._out(RUN_RECORDS))
        provider = self._embedding_provider()
        cache = self._embed_cache(provider)
        wordvec = self._wordvec_provider()
        rows = evaluate_records(corpus, records, provider, cache, wordvec)
        if not rows:
            raise DomainError(
                "no records could be scored — do any queries have reference answers?"
            )
        write_metrics_csv(aggregate_rows(rows), self._out(METRICS_CSV))
        self._write_manifest("evaluate", inputs, outputs)
        return StageResult("evaluate", "ran", tuple(outputs))

    def _stage_analyze(
        self, png: bool = False, joint: bool = True, temporal: bool = True
    ) -> StageResult:
        selected_path = self._out(SELECTED_CORPUS)
        self._require_upstream("analyze", "select", selected_path)
        self._require_upstream("analyze", "rank", self._out(RANKING_CSV))
        self._require_upstream("analyze", "contradict", self._out(CONTRADICTION_CSV))
        inputs = [selected_path, self._out(RANKING_CSV), self._out(CONTRADICTION_CSV)]
        outputs = [
            self._out(analysis_mod.JOINT_GRID_CSV),
            self._out(analysis_mod.TEMPORAL_GRID_CSV),
            self._out(analysis_mod.ANALYSIS_NOTES_JSON),
        ]
        full = joint and temporal
        if full and not png and self._can_skip("analyze", inputs, outputs):
            return StageResult("analyze", "skipped", tuple(outputs))
        corpus = self._load_selected()
        rankings = read_ranking_csv(self._out(RANKING_CSV))
        saliences = read_contradiction_csv(self._out(CONTRADICTION_CSV))
        joint_points = []
        temporal_points = []
        for query in corpus.sorted_queries():
            if query.id not in rankings:
                continue
            pool = corpus.pools[query.id]
            years = {d.pmid: d.year for d in pool.documents}
            per_query = saliences.get(query.id, {})
            for scored in rankings[query.id]:
                if scored.pmid not in per_query:
                    raise DomainError(
                        f"no salience for {query.id}/{scored.pmid}; "
                        "contradiction artifacts out of date"
                    )
                salience = per_query[scored.pmid]
                joint_points.append((scored.score, salience))
                temporal_points.append((years[scored.pmid], salience))
        grid, out_of_range = analysis_mod.joint_histogram(joint_points)
        intervals, temporal_grid, counts = analysis_mod.temporal_distribution(
            temporal_points
        )
        written = analysis_mod.export_analysis(
            grid,
            out_of_range,
            intervals,
            temporal_grid,
            counts,
            self.out_dir,
            png=png,
            joint=joint,
            temporal=temporal,
        )
        if full:
            # Partial exports must not satisfy a later full-run skip check.
            self._write_manifest("analyze", inputs, outputs)
        return StageResult("analyze", "ran", tuple(written))
