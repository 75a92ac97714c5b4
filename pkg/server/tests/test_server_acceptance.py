"""Provider interchangeability: live service vs exported cache.

The contract under test: a pipeline run on the fixture corpus must
produce byte-identical artifacts whether its embedding/NLI/word-vector
providers call this service over HTTP or read the dump its
``export-cache`` mode wrote. Generation is replayed from the same answer
files on both sides, which is exactly how offline runs consume recorded
model output.

The replay answers are recorded once, up front, by re-deriving every
prompt the runner will build from the dump-backed stores — the same
enumeration an operator would do to capture real model answers for CI.
"""
from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest
import requests

from medrag import config as cfg
from medrag import contradiction as ctr
from medrag import generation as gen
from medrag import ranking as rnk
from medrag import selection as sel
from medrag.analysis import ANALYSIS_NOTES_JSON, JOINT_GRID_CSV, TEMPORAL_GRID_CSV
from medrag.corpus import load_corpus
from medrag.embedding import VectorStore, text_key
from medrag.pipeline import (
    CONTRADICTION_CSV,
    CONTRADICTION_PAIRS_CSV,
    METRICS_CSV,
    RANKING_CSV,
    RUN_RECORDS,
    SELECTED_CORPUS,
    SELECTION_AUDIT,
)

from model_server.cli import main as server_main
from server_testkit import EMBED_TAG, FIXTURE_CORPUS, NLI_TAG, WORDVEC_TAG

ARTIFACTS = (
    SELECTED_CORPUS,
    SELECTION_AUDIT,
    RANKING_CSV,
    CONTRADICTION_CSV,
    CONTRADICTION_PAIRS_CSV,
    RUN_RECORDS,
    METRICS_CSV,
    JOINT_GRID_CSV,
    TEMPORAL_GRID_CSV,
    ANALYSIS_NOTES_JSON,
)

GEN_TAGS = ("alpha-gen", "beta-gen")


def _stub_answer(tag: str, query, docs) -> dict:
    """Deterministic stand-in for a recorded model answer."""
    if query.medicine_id == 2 and query.slot == "PreUseWarnings":
        return {"text": " insufficient evidence. ", "truncated": False}
    lead = docs[0].sentences[0] if docs[0].sentences else docs[0].text
    return {
        "text": f"{lead} Reported for {query.medicine_id}:{query.slot} by {tag}.",
        "truncated": tag == "alpha-gen" and query.slot == "Dosage",
    }


def _record_replays(dump, out_dir):
    """Re-derive every prompt a run will build and write replay files.

    Mirrors the runner's own flow (balanced selection, ranked pools,
    contradiction report, per-condition context) on top of the dump, so
    the recorded prompt hashes match what both runs will look up.
    """
    corpus = load_corpus(FIXTURE_CORPUS)
    embed_store = VectorStore(dump / "embed")
    nli_fn = ctr.make_nli_fn(ctr.FileBackedNliProvider(VectorStore(dump / "nli")))
    params = rnk.RankingParams()

    def vectors(texts):
        return np.stack([embed_store.get(text_key(t)) for t in texts])

    replay = {tag: {} for tag in GEN_TAGS}
    for query in corpus.sorted_queries():
        pool = corpus.pools.get(query.id)
        if pool is None or not pool.documents:
            continue
        chosen = sel.select_balanced(pool)
        ranking = rnk.rank(
            query,
            chosen,
            embed_store.get(text_key(query.text)),
            vectors([d.text for d in chosen.documents]),
            params,
        )
        if len(chosen.documents) >= 2:
            report = ctr.pool_contradictions(
                chosen,
                {
                    d.pmid: vectors(list(d.sentences))
                    if d.sentences
                    else np.zeros((0, 384))
                    for d in chosen.documents
                },
                nli_fn,
                theta=ctr.SENTENCE_THRESHOLD,
            )
            saliences = report.saliences
        else:
            saliences = {chosen.documents[0].pmid: 0.0}
        docs_by_pmid = {d.pmid: d for d in chosen.documents}
        for condition in gen.default_conditions(params.k):
            docs = gen.build_context(ranking, saliences, condition, docs_by_pmid)
            prompt = gen.build_prompt(query.text, docs)
            for tag in GEN_TAGS:
                replay[tag][gen.prompt_key(prompt)] = _stub_answer(tag, query, docs)

    paths = {}
    for tag in GEN_TAGS:
        path = out_dir / f"replay_{tag}.json"
        path.write_text(
            json.dumps({"model_tag": tag, "answers": replay[tag]},
                       indent=2, sort_keys=True),
            encoding="utf-8",
        )
        paths[tag] = path
    return paths


def _write_run_config(root, providers):
    shutil.copy(FIXTURE_CORPUS, root / "corpus.jsonl")
    config = cfg.PipelineConfig(
        paths=cfg.PathsConfig(corpus="corpus.jsonl", cache="cache", output="out"),
        providers=providers,
    )
    path = root / "config.json"
    cfg.save_config(config, path)
    return path


def _run_pipeline(config_path, root):
    env = dict(os.environ)
    env["SOURCE_DATE_EPOCH"] = "1700000000"
    proc = subprocess.run(
        [sys.executable, "-m", "medrag.cli", "run", "-c", str(config_path)],
        cwd=root,
        env=env,
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, f"run failed:\n{proc.stdout}\n{proc.stderr}"
    return root / "out"


@pytest.fixture(scope="module")
def interchange(tmp_path_factory, live_server):
    base = tmp_path_factory.mktemp("interchange")
    dump = base / "dump"

    # Corpus-only export, then prompt capture, then a second export that
    # folds the recorded answers into the same dump.
    assert server_main([
        "export-cache", "--corpus", str(FIXTURE_CORPUS), "--out", str(dump),
    ]) == 0
    replay_paths = _record_replays(dump, base)
    assert server_main([
        "export-cache", "--corpus", str(FIXTURE_CORPUS), "--out", str(dump),
        *[arg for path in replay_paths.values() for arg in ("--replay", str(path))],
    ]) == 0

    generation = tuple(
        cfg.GenerationProviderSpec(kind="replay", model_tag=tag,
                                   path=str(replay_paths[tag]))
        for tag in GEN_TAGS
    )

    file_root = base / "run_file"
    file_root.mkdir()
    file_config = _write_run_config(file_root, cfg.ProvidersConfig(
        embedding=cfg.ProviderSpec(kind="file", model_tag=EMBED_TAG,
                                   path=str(dump / "embed")),
        nli=cfg.ProviderSpec(kind="file", model_tag=NLI_TAG,
                             path=str(dump / "nli")),
        wordvec=cfg.ProviderSpec(kind="file", model_tag=WORDVEC_TAG,
                                 path=str(dump / "wordvec")),
        generation=generation,
    ))

    http_root = base / "run_http"
    http_root.mkdir()
    http_config = _write_run_config(http_root, cfg.ProvidersConfig(
        embedding=cfg.ProviderSpec(kind="http", model_tag=EMBED_TAG,
                                   endpoint=live_server.url, dimension=384),
        nli=cfg.ProviderSpec(kind="http", model_tag=NLI_TAG,
                             endpoint=live_server.url),
        wordvec=cfg.ProviderSpec(kind="http", model_tag=WORDVEC_TAG,
                                 endpoint=live_server.url, dimension=50),
        generation=generation,
    ))

    served_before = live_server.served
    file_out = _run_pipeline(file_config, file_root)
    http_out = _run_pipeline(http_config, http_root)
    served_after = live_server.served
    return {
        "file_out": file_out,
        "http_out": http_out,
        "served_before": served_before,
        "served_after": served_after,
    }


@pytest.mark.acceptance(
    "S1 pipeline artifacts are byte-identical via live server and its cache dump; "
    "/nli sums to 1, /embed dim 384"
)
def test_live_and_dump_runs_are_interchangeable(interchange, live_server):
    # The HTTP run must actually have exercised the service.
    assert interchange["served_after"]["embed"] > interchange["served_before"]["embed"]
    assert interchange["served_after"]["nli"] > interchange["served_before"]["nli"]

    for name in ARTIFACTS:
        file_bytes = (interchange["file_out"] / name).read_bytes()
        http_bytes = (interchange["http_out"] / name).read_bytes()
        assert file_bytes, f"{name} is empty"
        assert file_bytes == http_bytes, f"{name} differs between run modes"

    # The two service-level clauses of the criterion, against the same
    # live instance the pipeline just used.
    corpus = load_corpus(FIXTURE_CORPUS)
    query = corpus.sorted_queries()[0]
    resp = requests.post(
        live_server.url + "/embed",
        json={"model": EMBED_TAG, "texts": [query.text]},
        timeout=30,
    )
    assert resp.status_code == 200
    assert len(resp.json()["vectors"][0]) == 384

    pool = next(p for p in corpus.pools.values() if len(p.documents) >= 2)
    pairs = [
        {"premise": a, "hypothesis": b}
        for a in pool.documents[0].sentences
        for b in pool.documents[1].sentences
    ]
    resp = requests.post(
        live_server.url + "/nli",
        json={"model": NLI_TAG, "pairs": pairs},
        timeout=30,
    )
    assert resp.status_code == 200
    for p in resp.json()["probs"]:
        assert abs(p["ent"] + p["neu"] + p["con"] - 1.0) <= 1e-4


def test_interchanged_metrics_have_populated_similarity_columns(interchange):
    # Spot-check the dump covered everything evaluation needed: the
    # word-vector metrics only fill in when every answer token resolved.
    lines = (interchange["file_out"] / METRICS_CSV).read_text("utf-8").splitlines()
    header = lines[0].split(",")
    vsim_cos = header.index("vsim_cos")
    jsd = header.index("jsd")
    assert len(lines) > 1
    for line in lines[1:]:
        row = line.split(",")
        assert row[vsim_cos] != ""
        assert row[jsd] != ""


def test_http_run_populated_its_local_caches(interchange):
    # After a live run the pipeline's cache directory is itself a dump in
    # the same format; a re-run could go offline with it.
    cache = interchange["http_out"].parent / "cache"
    embed_cache = VectorStore(cache / "embed_cache")
    assert len(embed_cache) > 0
    nli_cache = VectorStore(cache / "nli_cache")
    assert len(nli_cache) > 0
