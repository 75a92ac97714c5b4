"""PubMed E-utilities ingestion: query formulation, search, fetch, parse.

Each query yields three formulations of decreasing strictness (exact
term clauses; term-group proximity restricted to the medicine title;
full-question proximity), all of which are searched and unioned.
Abstract XML is fetched in batches of at most 300 pmids, cached one
file per pmid so reruns are free, and records without an abstract or a
resolvable year are dropped. Citation counts come from the iCite public
API and default to zero when that service is unavailable.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .corpus import Document, EvidencePool, Medicine, QueryInstance, RAW
from .errors import DomainError, TransportError
from .pos import CONTENT_TAGS, default_tagger, word_tokenize

log = logging.getLogger(__name__)

EUTILS_BASE = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
ICITE_BASE = "https://icite.od.nih.gov/api"
EFETCH_BATCH_LIMIT = 300
ICITE_BATCH_LIMIT = 200
PROXIMITY_WINDOW = 25
DEFAULT_RETMAX = 1000
LANGUAGE_FILTER = "english[la]"


class QueryTier(str, Enum):
    EXACT_SENTENCE = "ExactSentence"
    PROXIMITY_TERMS = "ProximityTerms"
    PROXIMITY_FULL = "ProximityFull"


@dataclass(frozen=True)
class QueryFormulation:
    tier: QueryTier
    expression: str
    source_terms: tuple[str, ...]

    def __post_init__(self):
        if not self.expression.strip():
            raise DomainError("query expression must be non-empty")
        if self.tier is QueryTier.PROXIMITY_TERMS and "[ti]" not in self.expression:
            raise DomainError(
                "term-proximity formulation must restrict the medicine name "
                "to the title field"
            )


@dataclass(frozen=True)
class FetchBatch:
    pmids: tuple[str, ...]
    attempt: int = 0

    def __post_init__(self):
        if len(self.pmids) > EFETCH_BATCH_LIMIT:
            raise DomainError(
                f"fetch batch of {len(self.pmids)} exceeds limit {EFETCH_BATCH_LIMIT}"
            )


def load_exclusions(path: str | Path | None = None) -> frozenset[str]:
    """Case-insensitive company-name exclusion set from the bundled list
    (or a caller-supplied file of the same format)."""
    if path is None:
        raw = (
            resources.files("medrag")
            .joinpath("assets/company_exclusions.txt")
            .read_text("utf-8")
        )
    else:
        raw = Path(path).read_text("utf-8")
    names = set()
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.add(line.casefold())
    return frozenset(names)


def extract_content_terms(query_text: str, exclusions: Iterable[str] = ()) -> list[str]:
    """Nouns, verbs, and proper nouns from a question, in order.

    Excluded names are dropped case-insensitively; later duplicates of
    a term are removed, keeping the first occurrence's casing. An empty
    result is legal — the caller falls back to the full-question tier.
    """
    if not query_text.strip():
        raise DomainError("query text must be non-empty")
    excluded = {term.casefold() for term in exclusions}
    out: list[str] = []
    seen: set[str] = set()
    for tagged in default_tagger().tag(query_text):
        if tagged.tag not in CONTENT_TAGS:
            continue
        folded = tagged.text.casefold()
        if folded in excluded or folded in seen:
            continue
        seen.add(folded)
        out.append(tagged.text)
    return out


def formulate_queries(
    medicine: Medicine, query: QueryInstance, terms: Sequence[str]
) -> list[QueryFormulation]:
    """The three search tiers for one question (one tier if no terms)."""
    full_text = " ".join(word_tokenize(query.text))
    fallback = QueryFormulation(
        tier=QueryTier.PROXIMITY_FULL,
        expression=f'"{full_text}"[tiab:~{PROXIMITY_WINDOW}]',
        source_terms=(),
    )
    if not terms:
        return [fallback]
    exact = QueryFormulation(
        tier=QueryTier.EXACT_SENTENCE,
        expression=" AND ".join(f'"{t}"[tiab]' for t in terms),
        source_terms=tuple(terms),
    )
    grouped = " ".join(terms)
    proximity = QueryFormulation(
        tier=QueryTier.PROXIMITY_TERMS,
        expression=(
            f'"{grouped}"[tiab:~{PROXIMITY_WINDOW}] AND "{medicine.name}"[ti]'
        ),
        source_terms=tuple(terms),
    )
    return [exact, proximity, fallback]


def merge_dedup(results: Iterable[Sequence[str]]) -> list[str]:
    """Union of pmid lists preserving first-seen order."""
    out: list[str] = []
    seen: set[str] = set()
    for pmids in results:
        for pmid in pmids:
            if pmid not in seen:
                seen.add(pmid)
                out.append(pmid)
    return out


def _default_transport(session: requests.Session | None):
    def transport(url: str, params: dict) -> tuple[int, str]:
        try:
            if session is not None:
                response = session.get(url, params=params, timeout=60)
            else:
                response = requests.get(url, params=params, timeout=60)
        except requests.RequestException as exc:
            raise TransportError(f"GET {url} failed: {exc}") from exc
        return response.status_code, response.text

    return transport


_YEAR = re.compile(r"\b(\d{4})\b")


def _parse_year(pubdate: ET.Element | None) -> int | None:
    if pubdate is None:
        return None
    year = pubdate.findtext("Year")
    if year and year.isdigit():
        return int(year)
    medline = pubdate.findtext("MedlineDate")
    if medline:
        match = _YEAR.search(medline)
        if match:
            return int(match.group(1))
    return None


def parse_article(article: ET.Element) -> Document | None:
    """One PubmedArticle element to a Document; None when the record
    lacks an abstract or a resolvable year."""
    pmid = article.findtext("MedlineCitation/PMID")
    if not pmid:
        return None
    sections = article.findall("MedlineCitation/Article/Abstract/AbstractText")
    text = " ".join(
        part for part in ("".join(sec.itertext()).strip() for sec in sections) if part
    )
    if not text:
        return None
    year = _parse_year(
        article.find("MedlineCitation/Article/Journal/JournalIssue/PubDate")
    )
    if year is None:
        return None
    return Document(pmid=pmid, year=year, citations=0, text=text)


class PubmedClient:
    """esearch/efetch/iCite client with caching, retry, and rate limiting.

    ``transport`` is injectable as ``(url, params) -> (status, body)``
    so tests can run entirely offline.
    """

    def __init__(
        self,
        cache_dir: str | Path,
        api_key: str | None = None,
        transport=None,
        session: requests.Session | None = None,
        retries: int = 3,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep=time.sleep,
        min_interval: float = 0.34,
        max_workers: int = 3,
        language_filter: str | None = LANGUAGE_FILTER,
        retmax: int = DEFAULT_RETMAX,
    ):
        self.cache_dir = Path(cache_dir)
        (self.cache_dir / "efetch").mkdir(parents=True, exist_ok=True)
        self.api_key = api_key
        self.transport = transport or _default_transport(session)
        self.retries = retries
        self.backoff = list(backoff)
        self.sleep = sleep
        self.min_interval = min_interval
        self.max_workers = max(1, max_workers)
        self.language_filter = language_filter
        self.retmax = retmax
        self._rate_lock = threading.Lock()
        self._cache_lock = threading.Lock()
        self._last_request = 0.0

    # -- low-level request plumbing -------------------------------------

    def _throttle(self):
        with self._rate_lock:
            wait = self._last_request + self.min_interval - time.monotonic()
            if wait > 0:
                self.sleep(wait)
            self._last_request = time.monotonic()

    def _get(self, url: str, params: dict) -> str:
        if self.api_key:
            params = dict(params, api_key=self.api_key)
        failure: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt > 0:
                self.sleep(self.backoff[min(attempt - 1, len(self.backoff) - 1)])
            self._throttle()
            try:
                status, body = self.transport(url, params)
            except TransportError as exc:
                failure = exc
                continue
            if status == 200:
                return body
            failure = TransportError(f"GET {url} returned HTTP {status}")
            if status not in (429, 500, 502, 503, 504):
                break
        raise TransportError(
            f"GET {url} failed after {self.retries + 1} attempts: {failure}"
        )

    # -- esearch ---------------------------------------------------------

    def esearch(self, formulation: QueryFormulation) -> list[str]:
        """pmids matching one formulation, API order preserved."""
        term = formulation.expression
        if self.language_filter:
            term = f"({term}) AND {self.language_filter}"
        body = self._get(
            f"{EUTILS_BASE}/esearch.fcgi",
            {"db": "pubmed", "term": term, "retmax": self.retmax, "retmode": "xml"},
        )
        try:
            root = ET.fromstring(body)
        except ET.ParseError as exc:
            raise TransportError(f"malformed esearch response: {exc}") from exc
        return [el.text for el in root.findall("IdList/Id") if el.text]

    # -- efetch with per-pmid cache ---------------------------------------

    def _cached_article(self, pmid: str) -> ET.Element | None:
        path = self.cache_dir / "efetch" / f"{pmid}.xml"
        if not path.exists():
            return None
        try:
            return ET.fromstring(path.read_text("utf-8"))
        except ET.ParseError:
            log.warning("dropping unreadable cache entry %s", path)
            return None

    def _store_article(self, pmid: str, article: ET.Element) -> None:
        path = self.cache_dir / "efetch" / f"{pmid}.xml"
        data = ET.tostring(article, encoding="unicode")
        with self._cache_lock:
            tmp = path.with_suffix(".xml.tmp")
            tmp.write_text(data, "utf-8")
            tmp.replace(path)

    def _fetch_batch(self, batch: FetchBatch) -> list[ET.Element]:
        body = self._get(
            f"{EUTILS_BASE}/efetch.fcgi",
            {"db": "pubmed", "id": ",".join(batch.pmids), "retmode": "xml"},
        )
        try:
            root = ET.fromstring(body)
        except ET.ParseError as exc:
            raise TransportError(
                f"efetch XML parse error for batch {list(batch.pmids)}: {exc}"
            ) from exc
        articles = root.findall("PubmedArticle")
        for article in articles:
            pmid = article.findtext("MedlineCitation/PMID")
            if pmid:
                self._store_article(pmid, article)
        return articles

    def efetch_abstracts(self, pmids: Sequence[str]) -> list[Document]:
        """Documents for the given pmids, in input order.

        Cached pmids are parsed locally; only the remainder is fetched,
        in batches of at most 300, so re-running an ingest issues no
        duplicate requests. Citation counts are zero here — they are
        attached separately.
        """
        articles: dict[str, ET.Element] = {}
        missing: list[str] = []
        for pmid in pmids:
            cached = self._cached_article(pmid)
            if cached is not None:
                articles[pmid] = cached
            else:
                missing.append(pmid)

        batches = [
            FetchBatch(tuple(missing[i : i + EFETCH_BATCH_LIMIT]))
            for i in range(0, len(missing), EFETCH_BATCH_LIMIT)
        ]
        if batches:
            if self.max_workers > 1 and len(batches) > 1:
                with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                    results = list(pool.map(self._fetch_batch, batches))
            else:
                results = [self._fetch_batch(batch) for batch in batches]
            for fetched in results:
                for article in fetched:
                    pmid = article.findtext("MedlineCitation/PMID")
                    if pmid:
                        articles[pmid] = article

        documents = []
        for pmid in pmids:
            article = articles.get(pmid)
            if article is None:
                continue
            doc = parse_article(article)
            if doc is not None:
                documents.append(doc)
        return documents

    # -- citations ---------------------------------------------------------

    def _icite_cache_path(self) -> Path:
        return self.cache_dir / "icite.json"

    def citations(self, pmids: Sequence[str]) -> dict[str, int]:
        """Citation counts per pmid; zero when iCite can't resolve one."""
        cache_path = self._icite_cache_path()
        cached: dict[str, int] = {}
        if cache_path.exists():
            cached = json.loads(cache_path.read_text("utf-8"))
        missing = [p for p in pmids if p not in cached]
        for start in range(0, len(missing), ICITE_BATCH_LIMIT):
            chunk = missing[start : start + ICITE_BATCH_LIMIT]
            try:
                body = self._get(
                    f"{ICITE_BASE}/pubs",
                    {"pmids": ",".join(chunk), "fl": "pmid,citation_count"},
                )
                data = json.loads(body)
            except (TransportError, json.JSONDecodeError) as exc:
                log.warning("citation lookup failed (%s); defaulting to 0", exc)
                for pmid in chunk:
                    cached[pmid] = 0
                continue
            found = {}
            for entry in data.get("data", []):
                found[str(entry.get("pmid"))] = int(entry.get("citation_count") or 0)
            for pmid in chunk:
                cached[pmid] = found.get(pmid, 0)
        with self._cache_lock:
            tmp = cache_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(cached, ensure_ascii=False, sort_keys=True), "utf-8")
            tmp.replace(cache_path)
        return {p: cached[p] for p in pmids}


def ingest_query(
    client: PubmedClient,
    medicine: Medicine,
    query: QueryInstance,
    exclusions: Iterable[str] = (),
) -> EvidencePool:
    """Full ingest for one question: formulate, search all tiers, union,
    fetch abstracts, attach citation counts."""
    import dataclasses

    terms = extract_content_terms(query.text, exclusions)
    formulations = formulate_queries(medicine, query, terms)
    hits = [client.esearch(f) for f in formulations]
    pmids = merge_dedup(hits)
    documents = client.efetch_abstracts(pmids)
    counts = client.citations([d.pmid for d in documents])
    documents = [
        dataclasses.replace(
            d, citations=counts.get(d.pmid, 0), query_ref=query.id, sentences=()
        )
        for d in documents
    ]
    return EvidencePool(query_ref=query.id, documents=documents, stage=RAW)
