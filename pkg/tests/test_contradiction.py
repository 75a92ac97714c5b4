"""Sentence-gated contradiction scoring against hand-built fixtures.

The three-document fixture pins sentence vectors and float32-exact
probabilities (0.75, 0.25, 0.125, ...) so hand-computed directed scores
and salience means survive the store round-trip bit-for-bit.
"""
import math

import numpy as np
import pytest

import oracles
from testkit import build_nli_store
from httpstub import StubServer
from medrag.contradiction import (
    NLI_DIMENSION, SENTENCE_THRESHOLD, ContradictionReport,
    FileBackedNliProvider, HttpNliProvider, NliProbs, candidate_pairs,
    cnt_score, least_contradictory, make_nli_fn, most_contradictory,
    pair_key, pool_contradictions, read_contradiction_csv, salience_mean,
    write_contradiction_csv, write_pair_csv,
)
from medrag.corpus import RAW, Document, EvidencePool
from medrag.embedding import VectorStore
from medrag.errors import DomainError, ProviderLookupError


# --------------------------------------------------------------------------
# NliProbs
# --------------------------------------------------------------------------

def test_probs_validation():
    NliProbs(ent=0.2, neu=0.3, con=0.5)
    with pytest.raises(DomainError):
        NliProbs(ent=0.5, neu=0.5, con=0.5)  # sums to 1.5
    with pytest.raises(DomainError):
        NliProbs(ent=-0.2, neu=0.7, con=0.5)
    # float32 round-off on a softmax output is tolerated
    NliProbs(ent=0.2, neu=0.3, con=0.5 + 5e-4)


def test_probs_vector_round_trip():
    p = NliProbs(ent=0.125, neu=0.125, con=0.75)
    assert NliProbs.from_vector(p.as_vector()) == p


def test_pair_key_is_directional():
    assert pair_key("a", "b") != pair_key("b", "a")
    assert pair_key("a", "b") == pair_key("a", "b")
    # Concatenation cannot collide across the separator.
    assert pair_key("ab", "c") != pair_key("a", "bc")


# --------------------------------------------------------------------------
# Hand fixture: 3 documents, pinned vectors and probabilities
# --------------------------------------------------------------------------

def _unit(angle_deg):
    rad = math.radians(angle_deg)
    return [math.cos(rad), math.sin(rad)]


@pytest.fixture()
def hand_pool(tmp_path):
    docs = (
        Document(pmid="1", year=2000, citations=0, query_ref="1:Dosage",
                 text="Alpha finding one. Alpha finding two."),
        Document(pmid="2", year=2001, citations=0, query_ref="1:Dosage",
                 text="Beta finding one. Beta finding two."),
        Document(pmid="3", year=2002, citations=0, query_ref="1:Dosage",
                 text="Gamma finding one."),
    )
    pool = EvidencePool(query_ref="1:Dosage", documents=docs, stage=RAW)
    # Angles chosen so exactly four directed sentence pairs pass theta=0.75:
    # 1.s0<->2.s0 (cos 20 deg) and 1.s1<->3.s0 (cos 15 deg).
    vecs = {
        "1": np.array([_unit(0), _unit(90)]),
        "2": np.array([_unit(20), _unit(180)]),
        "3": np.array([_unit(75)]),
    }
    sents = {d.pmid: d.sentences for d in docs}
    probs = {
        (sents["1"][0], sents["2"][0]): np.array([0.125, 0.125, 0.75]),
        (sents["2"][0], sents["1"][0]): np.array([0.25, 0.5, 0.25]),
        (sents["1"][1], sents["3"][0]): np.array([0.5, 0.25, 0.25]),
        (sents["3"][0], sents["1"][1]): np.array([0.125, 0.75, 0.125]),
    }
    store = build_nli_store(tmp_path / "nli", probs)
    nli = make_nli_fn(FileBackedNliProvider(store))
    return pool, vecs, nli, probs


def test_candidate_pairs_thresholding(hand_pool):
    pool, vecs, _nli, _probs = hand_pool
    got = candidate_pairs(vecs["1"], vecs["2"])
    assert [(i, j) for i, j, _ in got] == [(0, 0)]
    assert got[0][2] == pytest.approx(math.cos(math.radians(20)), abs=1e-12)
    assert candidate_pairs(vecs["2"], vecs["3"]) == []


def test_candidate_threshold_is_inclusive():
    a = np.array([[3.0, 4.0]])
    got = candidate_pairs(a, a, theta=1.0)
    assert [(i, j) for i, j, _ in got] == [(0, 0)]


def test_cnt_score_is_max_over_candidates(hand_pool):
    pool, vecs, nli, _probs = hand_pool
    d1, d2, d3 = pool.documents
    score, evidence = cnt_score(d1, d2, vecs["1"], vecs["2"], nli)
    assert score == 0.75
    assert (evidence.premise_index, evidence.hypothesis_index) == (0, 0)
    score_back, _ = cnt_score(d2, d1, vecs["2"], vecs["1"], nli)
    assert score_back == 0.25


def test_cnt_score_without_candidates_is_exactly_zero(hand_pool):
    pool, vecs, nli, _probs = hand_pool
    _d1, d2, d3 = pool.documents[0], pool.documents[1], pool.documents[2]
    score, evidence = cnt_score(d2, d3, vecs["2"], vecs["3"], nli)
    assert score == 0.0 and isinstance(score, float)
    assert evidence is None


def test_pool_report_matches_hand_computation(hand_pool):
    pool, vecs, nli, _probs = hand_pool
    report = pool_contradictions(pool, vecs, nli)
    assert report.directed == {
        ("1", "2"): 0.75, ("2", "1"): 0.25,
        ("1", "3"): 0.25, ("3", "1"): 0.125,
        ("2", "3"): 0.0, ("3", "2"): 0.0,
    }
    # Hand means over outgoing scores; all values are float32-exact.
    assert report.saliences == {"1": 0.5, "2": 0.125, "3": 0.0625}
    assert len(report.evidence) == 4


def test_pool_report_matches_oracle(hand_pool):
    pool, vecs, nli, probs = hand_pool
    doc_sents = {d.pmid: list(d.sentences) for d in pool.documents}
    vec_lists = {p: [row for row in m] for p, m in vecs.items()}

    def con_lookup(premise, hypothesis):
        return float(np.float32(probs[(premise, hypothesis)][2]))

    want = oracles.cnt_matrix(doc_sents, vec_lists, con_lookup)
    report = pool_contradictions(pool, vecs, nli)
    assert report.directed == want
    assert report.saliences == oracles.saliences_from(want)


def test_pool_requires_two_documents(hand_pool):
    pool, vecs, nli, _ = hand_pool
    single = EvidencePool(query_ref="1:Dosage",
                          documents=(pool.documents[0],), stage=RAW)
    with pytest.raises(DomainError):
        pool_contradictions(single, vecs, nli)


def test_pool_validates_sentence_matrix_shape(hand_pool):
    pool, vecs, nli, _ = hand_pool
    bad = dict(vecs)
    bad["1"] = bad["1"][:1]  # one vector for a two-sentence document
    with pytest.raises(DomainError):
        pool_contradictions(pool, bad, nli)


# --------------------------------------------------------------------------
# Salience helpers
# --------------------------------------------------------------------------

def test_salience_mean_hand_values():
    assert salience_mean([0.8, 0.2]) == 0.5
    assert salience_mean([0.0, 0.0, 0.0]) == 0.0
    assert salience_mean([1.0]) == 1.0
    with pytest.raises(DomainError):
        salience_mean([])


def test_most_and_least_sorting_with_ties():
    saliences = {"5": 0.4, "2": 0.9, "9": 0.4, "12": 0.1, "3": 0.9}
    assert most_contradictory(saliences, 3) == ["2", "3", "5"]
    assert least_contradictory(saliences, 3) == ["12", "5", "9"]
    assert most_contradictory(saliences, 99) == ["2", "3", "5", "9", "12"]
    assert oracles.sort_most_contradictory(saliences, 3) == ["2", "3", "5"]
    assert oracles.sort_least_contradictory(saliences, 3) == ["12", "5", "9"]


def test_sorting_matches_oracle_on_random_maps():
    rng = np.random.default_rng(61)
    for _ in range(100):
        n = int(rng.integers(1, 15))
        saliences = {
            str(int(rng.integers(1, 500))): float(rng.choice([0.0, 0.25, 0.5, 0.8]))
            for _ in range(n)
        }
        k = int(rng.integers(1, 6))
        assert most_contradictory(saliences, k) == oracles.sort_most_contradictory(saliences, k)
        assert least_contradictory(saliences, k) == oracles.sort_least_contradictory(saliences, k)


# --------------------------------------------------------------------------
# Batching and caching
# --------------------------------------------------------------------------

class CountingProvider:
    model_tag = "count"
    kind = "test"

    def __init__(self):
        self.batches = []

    def probs(self, pairs):
        self.batches.append(len(pairs))
        return [NliProbs(ent=0.25, neu=0.5, con=0.25) for _ in pairs]


def test_nli_fn_batches_deduplicates_and_caches(tmp_path):
    provider = CountingProvider()
    cache = VectorStore.create(tmp_path / "c", dimension=NLI_DIMENSION, model_tag="count")
    fn = make_nli_fn(provider, cache, batch_size=2)
    pairs = [("a", "b"), ("c", "d"), ("a", "b"), ("e", "f"), ("g", "h"), ("i", "j")]
    out = fn(pairs)
    assert len(out) == 6
    assert out[0] == out[2]
    assert provider.batches == [2, 2, 1]  # 5 unique pairs in batches of 2

    provider.batches.clear()
    fn2 = make_nli_fn(provider, cache, batch_size=2)
    fn2([("a", "b"), ("g", "h")])
    assert provider.batches == []  # everything served from the cache


def test_nli_cache_dimension_guard(tmp_path):
    cache = VectorStore.create(tmp_path / "c", dimension=5, model_tag="x")
    with pytest.raises(DomainError):
        make_nli_fn(CountingProvider(), cache)


def test_file_backed_provider_missing_pair(tmp_path):
    store = VectorStore.create(tmp_path / "nli", dimension=3, model_tag="nli")
    provider = FileBackedNliProvider(store)
    with pytest.raises(ProviderLookupError):
        provider.probs([("never", "seen")])


def test_http_nli_provider_round_trip():
    def route(payload):
        assert payload["model"] == "nli"
        return 200, {"probs": [
            {"ent": 0.1, "neu": 0.2, "con": 0.7} for _ in payload["pairs"]
        ]}

    with StubServer({"POST /nli": route}) as srv:
        provider = HttpNliProvider(srv.url, "nli")
        out = provider.probs([("p1", "h1"), ("p2", "h2")])
        assert [p.con for p in out] == [0.7, 0.7]
        sent = srv.requests[0]["payload"]
        assert sent["pairs"][0] == {"premise": "p1", "hypothesis": "h1"}


# --------------------------------------------------------------------------
# CSV artifacts
# --------------------------------------------------------------------------

def test_contradiction_csv_round_trip(tmp_path, hand_pool):
    pool, vecs, nli, _ = hand_pool
    report = pool_contradictions(pool, vecs, nli)
    path = tmp_path / "contradiction.csv"
    write_contradiction_csv({"1:Dosage": report}, path)
    back = read_contradiction_csv(path)
    assert back == {"1:Dosage": report.saliences}
    header = path.read_text().splitlines()[0]
    assert header == "query_ref,pmid,salience"


def test_pair_csv_lists_max_achieving_pairs(tmp_path, hand_pool):
    pool, vecs, nli, _ = hand_pool
    report = pool_contradictions(pool, vecs, nli)
    path = tmp_path / "pairs.csv"
    write_pair_csv({"1:Dosage": report}, path)
    lines = path.read_text().splitlines()
    assert lines[0] == (
        "query_ref,premise_pmid,hypothesis_pmid,cnt,premise_index,"
        "hypothesis_index,similarity"
    )
    # One row per directed document pair; pairs without a passing
    # candidate keep cnt 0 and leave the evidence columns empty.
    assert len(lines) == 1 + len(report.directed)
    assert "1:Dosage,2,3,0,,," in lines
    assert any(line.startswith("1:Dosage,1,2,0.75,0,0,") for line in lines)
