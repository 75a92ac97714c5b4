"""Temporal-citation balanced selection of evidence pools.

Caps each query's pool at 20 abstracts while covering the full span of
publication years: when more than 20 distinct years are present, years are
stratified at roughly three-year gaps, then a round-robin over the chosen
years repeatedly takes the highest-cited remaining abstract per year.
"""

from __future__ import annotations

from collections import defaultdict

from .corpus import SELECTED, Document, EvidencePool
from .errors import DomainError

TARGET = 20
YEAR_GAP = 3


def _pmid_key(pmid: str):
    # Numeric pmids order numerically; anything else falls back to string order.
    return (0, int(pmid)) if pmid.isdigit() else (1, pmid)


def citation_order_key(doc: Document):
    """Sort key: citations descending, then lower pmid first."""
    return (-doc.citations, _pmid_key(doc.pmid))


def stratified_sample_years(years: set[int], target: int = TARGET, gap: int = YEAR_GAP) -> list[int]:
    """Pick ``target`` years spanning the full range.

    A greedy ascending pass keeps years at least ``gap`` apart starting from
    the minimum; leftover slots are filled with the most recent unselected
    years. The minimum and maximum years are always in the result.
    """
    if len(years) < target:
        raise DomainError(
            f"stratified sampling needs at least {target} years, got {len(years)}"
        )
    ordered = sorted(years)
    maximum = ordered[-1]
    chosen: list[int] = []
    last = None
    for year in ordered:
        if last is not None and year - last < gap:
            continue
        # Keep one slot for the maximum year if the greedy pass won't reach it.
        if len(chosen) == target - 1 and year != maximum:
            break
        chosen.append(year)
        last = year
        if len(chosen) == target:
            break
    if len(chosen) < target:
        selected = set(chosen)
        for year in reversed(ordered):
            if year not in selected:
                chosen.append(year)
                selected.add(year)
                if len(chosen) == target:
                    break
    return sorted(chosen)


def select_balanced(pool: EvidencePool, target: int = TARGET, gap: int = YEAR_GAP) -> EvidencePool:
    """Reduce a raw pool to at most ``target`` documents, round-robin by year."""
    if not pool.documents:
        raise DomainError(f"pool {pool.query_ref} is empty")

    by_year: dict[int, list[Document]] = defaultdict(list)
    for doc in pool.documents:
        by_year[doc.year].append(doc)

    years = set(by_year)
    if len(years) >= target:
        chosen_years = stratified_sample_years(years, target, gap)
    else:
        chosen_years = sorted(years)

    strata = {y: sorted(by_year[y], key=citation_order_key) for y in chosen_years}
    positions = {y: 0 for y in chosen_years}

    picked: list[Document] = []
    while len(picked) < target:
        advanced = False
        for year in chosen_years:
            if positions[year] < len(strata[year]):
                picked.append(strata[year][positions[year]])
                positions[year] += 1
                advanced = True
                if len(picked) == target:
                    break
        if not advanced:
            break
    return EvidencePool(query_ref=pool.query_ref, documents=picked, stage=SELECTED)


def year_histogram(pool: EvidencePool) -> dict[int, int]:
    """Document count per publication year, for selection audit output."""
    hist: dict[int, int] = defaultdict(int)
    for doc in pool.documents:
        hist[doc.year] += 1
    return dict(sorted(hist.items()))
