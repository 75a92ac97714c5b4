"""Contradiction-aware retrieval-augmented generation for medicine QA.

The package covers the full pipeline: PubMed ingestion, temporal-citation
balanced evidence selection, diversity-aware ranking, pairwise contradiction
scoring, grounded generation, and reference-based evaluation.
"""

__version__ = "0.1.0"
