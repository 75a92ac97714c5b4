"""Diversity-aware ranking against its oracle, plus limit behaviors."""
import numpy as np
import pytest

import oracles
from medrag.corpus import RAW, Document, EvidencePool, QueryInstance
from medrag.errors import DomainError
from medrag.ranking import (
    EPSILON, RankingParams, ScoredDocument, rank, read_ranking_csv,
    temporal_score, top_k_similar, write_ranking_csv,
)


def make_pool(years, query_ref="1:Dosage", pmids=None):
    pmids = pmids or [str(i + 1) for i in range(len(years))]
    docs = tuple(
        Document(pmid=p, year=y, citations=0, text=f"Doc {p}.", query_ref=query_ref)
        for p, y in zip(pmids, years)
    )
    return EvidencePool(query_ref=query_ref, documents=docs, stage=RAW)


QUERY = QueryInstance(medicine_id=1, slot="Dosage", text="How do I use ASPIRIN?")


def random_case(rng, n):
    years = [int(rng.integers(1975, 2026)) for _ in range(n)]
    pool = make_pool(years)
    qv = rng.standard_normal(8)
    pv = rng.standard_normal((n, 8))
    return pool, qv, pv, years


# --------------------------------------------------------------------------
# Oracle agreement
# --------------------------------------------------------------------------

def test_rank_matches_oracle_on_random_pools():
    rng = np.random.default_rng(101)
    params = RankingParams()
    for _ in range(200):
        n = int(rng.integers(1, 9))
        pool, qv, pv, years = random_case(rng, n)
        got = rank(QUERY, pool, qv, pv, params)
        want = oracles.rank_documents(
            qv, pv, [d.pmid for d in pool.documents], years,
            lam=params.lam, alpha=params.alpha, epsilon=params.epsilon,
        )
        assert [s.pmid for s in got] == [r["pmid"] for r in want]
        for s, r in zip(got, want):
            assert s.relevance == pytest.approx(r["relevance"], abs=1e-12)
            assert s.redundancy == pytest.approx(r["redundancy"], abs=1e-12)
            assert s.mmr == pytest.approx(r["mmr"], abs=1e-12)
            assert s.tau == pytest.approx(r["tau"], abs=1e-12)
            assert s.score == pytest.approx(r["score"], abs=1e-12)


def test_score_decomposition_identity():
    rng = np.random.default_rng(103)
    params = RankingParams()
    for _ in range(200):
        n = int(rng.integers(1, 9))
        pool, qv, pv, _years = random_case(rng, n)
        for s in rank(QUERY, pool, qv, pv, params):
            mmr = params.lam * s.relevance - (1.0 - params.lam) * s.redundancy
            score = params.alpha * s.mmr + (1.0 - params.alpha) * s.tau
            assert abs(s.mmr - mmr) <= 1e-12
            assert abs(s.score - score) <= 1e-12


# --------------------------------------------------------------------------
# Limit behaviors
# --------------------------------------------------------------------------

def test_lambda_one_is_pure_relevance():
    rng = np.random.default_rng(107)
    pool, qv, pv, _ = random_case(rng, 6)
    ranked = rank(QUERY, pool, qv, pv, RankingParams(lam=1.0, alpha=1.0))
    rels = [s.relevance for s in ranked]
    assert rels == sorted(rels, reverse=True)
    for s in ranked:
        assert s.mmr == pytest.approx(s.relevance, abs=1e-15)
        assert s.score == pytest.approx(s.relevance, abs=1e-15)


def test_alpha_one_removes_temporal_influence():
    rng = np.random.default_rng(109)
    pool, qv, pv, _ = random_case(rng, 6)
    ranked = rank(QUERY, pool, qv, pv, RankingParams(alpha=1.0))
    for s in ranked:
        assert s.score == pytest.approx(s.mmr, abs=1e-15)


def test_same_year_pool_has_zero_tau():
    pool = make_pool([2009] * 5)
    rng = np.random.default_rng(113)
    ranked = rank(QUERY, pool, rng.standard_normal(4),
                  rng.standard_normal((5, 4)), RankingParams())
    assert all(s.tau == 0.0 for s in ranked)


def test_singleton_pool_has_zero_redundancy():
    pool = make_pool([2010])
    rng = np.random.default_rng(127)
    ranked = rank(QUERY, pool, rng.standard_normal(4),
                  rng.standard_normal((1, 4)), RankingParams())
    assert len(ranked) == 1
    assert ranked[0].redundancy == 0.0
    assert ranked[0].tau == 0.0  # lone year is both min and max


def test_temporal_score_normalizes_with_epsilon():
    pool = make_pool([2000, 2010])
    newest, oldest = pool.documents[1], pool.documents[0]
    assert temporal_score(oldest, pool, EPSILON) == 0.0
    expected = 10.0 / (10.0 + EPSILON)
    assert temporal_score(newest, pool, EPSILON) == pytest.approx(expected, abs=1e-15)
    assert temporal_score(newest, pool, EPSILON) < 1.0


def test_rank_ties_break_on_pmid():
    pool = make_pool([2005, 2005, 2005], pmids=["30", "4", "100"])
    qv = np.array([1.0, 0.0])
    pv = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    ranked = rank(QUERY, pool, qv, pv, RankingParams())
    assert [s.pmid for s in ranked] == ["4", "30", "100"]


def test_param_validation():
    with pytest.raises(DomainError):
        RankingParams(lam=1.5)
    with pytest.raises(DomainError):
        RankingParams(alpha=-0.1)
    with pytest.raises(DomainError):
        RankingParams(k=0)
    with pytest.raises(DomainError):
        RankingParams(epsilon=0.0)


def test_rank_validates_shapes():
    pool = make_pool([2000, 2001])
    with pytest.raises(DomainError):
        rank(QUERY, pool, np.ones(4), np.ones((3, 4)), RankingParams())


# --------------------------------------------------------------------------
# top-k and CSV round-trip
# --------------------------------------------------------------------------

def _ranked_fixture():
    rng = np.random.default_rng(131)
    pool, qv, pv, _ = random_case(rng, 7)
    return rank(QUERY, pool, qv, pv, RankingParams())


def test_top_k_similar_takes_ranking_head():
    ranked = _ranked_fixture()
    assert top_k_similar(ranked, 3) == list(ranked[:3])
    assert top_k_similar(ranked, 99) == list(ranked)
    with pytest.raises(DomainError):
        top_k_similar(ranked, 0)


def test_ranking_csv_round_trip(tmp_path):
    ranked = _ranked_fixture()
    path = tmp_path / "ranking.csv"
    write_ranking_csv({QUERY.id: ranked}, path)
    back = read_ranking_csv(path)
    assert list(back) == [QUERY.id]
    for orig, loaded in zip(ranked, back[QUERY.id]):
        assert isinstance(loaded, ScoredDocument)
        assert loaded.pmid == orig.pmid
        # 10 significant digits survive the text round-trip
        assert loaded.score == pytest.approx(orig.score, rel=1e-9)
        assert loaded.tau == pytest.approx(orig.tau, rel=1e-9)
