"""
Candidate retrieval from scholarly indexes.

Every parsed citation gets up to three lookups, always all of the applicable
ones, in this order:

    doi             Crossref /works/{doi}       (when the citation carries a DOI)
    s2_title        Semantic Scholar title search, top k
    crossref_title  Crossref title search, top k

Results are normalized to CandidateRecord and concatenated; records that
share a DOI are merged (first one wins).
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from enum import Enum
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Tuple, Union

from bs4 import BeautifulSoup
from pydantic import BaseModel, Field

from .config import Config
from .crossref_data import CrossrefClient
from .errors import InputError, RetrievalError, SkipRecord
from .http_client import ResponseCache
from .matcher import normalized_query
from .refparse import ParsedCitation, YEAR_MAX, YEAR_MIN
from .semantic_scholar_data import SemanticScholarClient

logger = logging.getLogger(__name__)

LOOKUP_DOI = "doi"
LOOKUP_S2_TITLE = "s2_title"
LOOKUP_CROSSREF_TITLE = "crossref_title"
LOOKUP_ORDER = (LOOKUP_DOI, LOOKUP_S2_TITLE, LOOKUP_CROSSREF_TITLE)


class Source(str, Enum):
    CROSSREF = "Crossref"
    SEMANTIC_SCHOLAR = "SemanticScholar"
    FIXTURE = "Fixture"


class Service(str, Enum):
    CROSSREF = "crossref"
    SEMANTIC_SCHOLAR = "semantic_scholar"


class CandidateRecord(BaseModel):
    source: Source
    title: str = Field(min_length=1)
    authors: List[str] = Field(default_factory=list)
    venue: Optional[str] = None
    year: Optional[int] = None
    doi: Optional[str] = None


class RetrievalConfig(BaseModel):
    k: int = Field(5, ge=1)
    crossref_rate: float = Field(5.0, gt=0)
    s2_rate: float = Field(1.0, gt=0)
    cache_dir: str = Field(default_factory=lambda: Config.CACHE_DIR)
    mailto: Optional[str] = Field(default_factory=lambda: Config.CROSSREF_MAILTO)
    s2_api_key: Optional[str] = Field(default_factory=lambda: Config.S2_API_KEY)
    max_attempts: int = Field(3, ge=1)
    backoff: float = Field(1.0, ge=0)
    timeout: float = Field(20.0, gt=0)
    workers: int = Field(4, ge=1)


class CandidateSet(BaseModel):
    citation_index: int
    candidates: List[CandidateRecord] = Field(default_factory=list)
    lookups_attempted: List[str] = Field(default_factory=list)
    lookups_failed: List[str] = Field(default_factory=list)


# --- Record normalization ---

def _strip_markup(text):
    if not isinstance(text, str):
        return None
    if "<" in text or "&" in text:
        text = BeautifulSoup(text, "html.parser").get_text()
    text = re.sub(r"\s+", " ", text).strip()
    return text or None


def _first(value):
    if isinstance(value, list):
        return value[0] if value else None
    return value


def _coerce_year(value):
    if value is None or isinstance(value, bool):
        return None
    try:
        year = int(str(value).strip()[:4])
    except ValueError:
        return None
    return year if YEAR_MIN <= year <= YEAR_MAX else None


def _author_name(author):
    if isinstance(author, str):
        return author.strip() or None
    if not isinstance(author, dict):
        return None
    if author.get("family"):
        given = (author.get("given") or "").strip()
        return f"{author['family'].strip()}, {given}" if given else author["family"].strip()
    name = author.get("name") or author.get("literal")
    return name.strip() if isinstance(name, str) and name.strip() else None


def _crossref_year(raw):
    for field in ("issued", "published-print", "published-online", "published", "created"):
        parts = (raw.get(field) or {}).get("date-parts") or []
        if parts and parts[0] and parts[0][0] is not None:
            return _coerce_year(parts[0][0])
    return None


def _is_crossref_shape(raw):
    return (
        isinstance(raw.get("title"), list)
        or "container-title" in raw
        or "issued" in raw
        or "DOI" in raw
        or any(isinstance(a, dict) and "family" in a for a in raw.get("author") or [])
    )


def normalize_record(raw: dict, source: Source) -> CandidateRecord:
    """
    Unify a Crossref work, a Semantic Scholar paper or a flat fixture record.

    Raises:
        SkipRecord: the record has no usable title
    """
    if not isinstance(raw, dict):
        raise SkipRecord(f"not a record: {type(raw).__name__}")

    title = _strip_markup(_first(raw.get("title")))
    if not title:
        raise SkipRecord(f"{Source(source).value} record without title")

    if _is_crossref_shape(raw):
        authors = raw.get("author") or []
        venue = _first(raw.get("container-title"))
        year = _crossref_year(raw)
        doi = raw.get("DOI") or raw.get("doi")
    elif "externalIds" in raw or any(isinstance(a, dict) for a in raw.get("authors") or []):
        authors = raw.get("authors") or []
        venue = raw.get("venue")
        year = _coerce_year(raw.get("year"))
        doi = (raw.get("externalIds") or {}).get("DOI")
    else:
        authors = raw.get("authors") or []
        venue = raw.get("venue")
        year = _coerce_year(raw.get("year"))
        doi = raw.get("doi")

    names = [name for name in (_author_name(a) for a in authors) if name]

    return CandidateRecord(
        source=source,
        title=title,
        authors=names,
        venue=_strip_markup(venue),
        year=year,
        doi=doi.strip() if isinstance(doi, str) and doi.strip() else None,
    )


# --- Backends ---

class LiveIndexBackend:
    """Crossref + Semantic Scholar behind the on-disk response cache."""

    def __init__(self, cfg: RetrievalConfig, session=None, **http_kwargs):
        self.cache = ResponseCache(cfg.cache_dir)
        self.crossref = CrossrefClient(
            mailto=cfg.mailto,
            rate_per_second=cfg.crossref_rate,
            timeout=cfg.timeout,
            max_attempts=cfg.max_attempts,
            backoff=cfg.backoff,
            session=session,
            **http_kwargs,
        )
        self.semantic_scholar = SemanticScholarClient(
            api_key=cfg.s2_api_key,
            mailto=cfg.mailto,
            rate_per_second=cfg.s2_rate,
            timeout=cfg.timeout,
            max_attempts=cfg.max_attempts,
            backoff=cfg.backoff,
            session=session,
            **http_kwargs,
        )

    @property
    def request_count(self):
        return self.crossref.request_count + self.semantic_scholar.request_count

    def record_source(self, service: Service) -> Source:
        return Source.CROSSREF if service == Service.CROSSREF else Source.SEMANTIC_SCHOLAR

    def get_doi(self, doi):
        query = doi.strip().lower()
        hit, payload = self.cache.get(Service.CROSSREF.value, "doi", query)
        if hit:
            return payload

        payload = self.crossref.get_work(doi)
        self.cache.put(Service.CROSSREF.value, "doi", query, payload)
        return payload

    def search_title(self, service: Service, title, k):
        query_type = f"title_k{k}"
        query = normalized_query(title)
        hit, payload = self.cache.get(service.value, query_type, query)
        if hit:
            return payload or []

        if service == Service.CROSSREF:
            payload = self.crossref.search_title(title, rows=k)
        else:
            payload = self.semantic_scholar.search_title(title, limit=k)
        self.cache.put(service.value, query_type, query, payload)
        return payload


class FixtureIndexBackend:
    """
    Offline index read from a JSON file:

        {"doi": {"10.x/y": record},
         "s2_title": {"normalized title": [record, ...]},
         "crossref_title": {"normalized title": [record, ...]},
         "failures": {"doi": ["10.x/z"], "s2_title": [...], "crossref_title": [...]}}

    Title sections are keyed by the normalized query; records may use any of
    the shapes normalize_record understands. "failures" lists queries that
    raise RetrievalError, for exercising degraded runs.
    """

    def __init__(self, path):
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            raise InputError(f"Cannot read fixture index {path}: {e}") from e

        self.path = path
        self.request_count = 0
        self.dois = {doi.lower(): record for doi, record in (data.get("doi") or {}).items()}
        self.titles = {
            LOOKUP_S2_TITLE: {normalized_query(q): hits for q, hits in (data.get("s2_title") or {}).items()},
            LOOKUP_CROSSREF_TITLE: {normalized_query(q): hits for q, hits in (data.get("crossref_title") or {}).items()},
        }
        failures = data.get("failures") or {}
        self.failures = {
            LOOKUP_DOI: {doi.lower() for doi in failures.get("doi", [])},
            LOOKUP_S2_TITLE: {normalized_query(q) for q in failures.get("s2_title", [])},
            LOOKUP_CROSSREF_TITLE: {normalized_query(q) for q in failures.get("crossref_title", [])},
        }
        logger.info(f"Loaded fixture index {path.name}: {len(self.dois)} DOIs, "
                    f"{len(self.titles[LOOKUP_S2_TITLE])}/{len(self.titles[LOOKUP_CROSSREF_TITLE])} title queries")

    def record_source(self, service: Service) -> Source:
        return Source.FIXTURE

    def get_doi(self, doi):
        query = doi.strip().lower()
        if query in self.failures[LOOKUP_DOI]:
            raise RetrievalError(f"fixture failure for DOI {doi}", service=Service.CROSSREF.value, query=doi)
        return self.dois.get(query)

    def search_title(self, service: Service, title, k):
        lookup = LOOKUP_CROSSREF_TITLE if service == Service.CROSSREF else LOOKUP_S2_TITLE
        query = normalized_query(title)
        if query in self.failures[lookup]:
            raise RetrievalError(f"fixture failure for {lookup} {title!r}", service=service.value, query=title)
        return list(self.titles[lookup].get(query, []))[:k]


def build_backend(kind: str, cfg: RetrievalConfig, fixture_path=None):
    if kind == "fixture":
        if not fixture_path:
            raise InputError("The fixture backend needs a fixture index file")
        return FixtureIndexBackend(fixture_path)
    if kind == "live":
        return LiveIndexBackend(cfg)
    raise ValueError(f"Unknown backend: {kind}")


# --- Lookup protocol ---

def lookup_doi(doi: str, backend) -> Optional[CandidateRecord]:
    raw = backend.get_doi(doi)
    if raw is None:
        return None
    try:
        return normalize_record(raw, backend.record_source(Service.CROSSREF))
    except SkipRecord as e:
        logger.warning(f"DOI {doi} resolved to an unusable record: {e}")
        return None


def search_title(title: str, service: Union[Service, str], cfg: RetrievalConfig, backend) -> List[CandidateRecord]:
    service = Service(service)
    source = backend.record_source(service)
    records = []
    for raw in backend.search_title(service, title, cfg.k) or []:
        try:
            records.append(normalize_record(raw, source))
        except SkipRecord as e:
            logger.debug(f"Skipping {service.value} hit: {e}")
        if len(records) == cfg.k:
            break
    return records


def _dedupe_by_doi(records):
    seen = set()
    unique = []
    for record in records:
        if record.doi:
            key = record.doi.lower()
            if key in seen:
                continue
            seen.add(key)
        unique.append(record)
    return unique


def retrieve_candidates(parsed: ParsedCitation, cfg: RetrievalConfig, backend) -> CandidateSet:
    """
    Run all applicable lookups for one citation.

    Individual lookup failures are recorded in lookups_failed; when every
    attempted lookup fails a RetrievalError is raised instead.
    """
    if not parsed.parse_ok:
        return CandidateSet(citation_index=parsed.citation_index)

    lookups = []
    if parsed.doi:
        lookups.append((LOOKUP_DOI, lambda: [r for r in [lookup_doi(parsed.doi, backend)] if r is not None]))
    if parsed.title:
        lookups.append((LOOKUP_S2_TITLE, lambda: search_title(parsed.title, Service.SEMANTIC_SCHOLAR, cfg, backend)))
        lookups.append((LOOKUP_CROSSREF_TITLE, lambda: search_title(parsed.title, Service.CROSSREF, cfg, backend)))

    candidates, attempted, failed = [], [], []
    for name, run in lookups:
        attempted.append(name)
        try:
            candidates.extend(run())
        except RetrievalError as e:
            failed.append(name)
            logger.warning(f"Lookup {name} failed for citation {parsed.citation_index}: {e}")

    if attempted and len(failed) == len(attempted):
        raise RetrievalError(
            f"All lookups failed for citation {parsed.citation_index}",
            query=parsed.doi or parsed.title,
        )

    return CandidateSet(
        citation_index=parsed.citation_index,
        candidates=_dedupe_by_doi(candidates),
        lookups_attempted=attempted,
        lookups_failed=failed,
    )


def retrieve_many(
    citations: Iterable[Tuple[Hashable, ParsedCitation]],
    cfg: RetrievalConfig,
    backend,
) -> Dict[Hashable, Union[CandidateSet, RetrievalError]]:
    """
    Retrieve candidates for many citations concurrently.

    Args:
        citations: (key, parsed citation) pairs
        cfg: retrieval settings; cfg.workers bounds the thread pool
        backend: live or fixture backend

    Returns:
        dict: key -> CandidateSet, or the RetrievalError for citations whose
        lookups all failed. Keys follow input order regardless of completion order.
    """
    citations = list(citations)
    results = {}

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        futures = {
            executor.submit(retrieve_candidates, parsed, cfg, backend): key
            for key, parsed in citations
        }
        for future in as_completed(futures):
            key = futures[future]
            try:
                results[key] = future.result()
            except RetrievalError as e:
                logger.error(f"Retrieval failed for {key}: {e}")
                results[key] = e

    failed = sum(1 for r in results.values() if isinstance(r, RetrievalError))
    logger.info(f"Retrieved candidates for {len(citations)} citations ({failed} failed)")
    return {key: results[key] for key, _ in citations}
