"""
Field similarity and candidate scoring.

A parsed citation is compared with an index record on four fields and the
components are combined with fixed weights:

    s = 0.60 * t + 0.20 * a + 0.15 * y + 0.05 * v

t: token-set title similarity, a: author last-name overlap,
y: year agreement (1.0 exact, 0.5 off by one, 0 otherwise),
v: partial venue similarity.

All similarity primitives are built on the normalized Levenshtein ratio
1 - distance / max(len), with ("", "") defined as 1.0.
"""

from __future__ import annotations

import math
import re
import unicodedata
from typing import TYPE_CHECKING, List, Optional, Sequence

from nameparser import HumanName
from pydantic import BaseModel, Field, model_validator
from rapidfuzz.distance import Levenshtein
from unidecode import unidecode

if TYPE_CHECKING:
    from .indexclient import CandidateRecord
    from .refparse import ParsedCitation

TITLE_WEIGHT = 0.60
AUTHOR_WEIGHT = 0.20
YEAR_WEIGHT = 0.15
VENUE_WEIGHT = 0.05


class MatchScore(BaseModel):
    s: float = Field(ge=0.0, le=1.0)
    t: float = Field(ge=0.0, le=1.0)
    a: float = Field(ge=0.0, le=1.0)
    y: float = Field(ge=0.0, le=1.0)
    v: float = Field(ge=0.0, le=1.0)

    # Reference to the scored candidate
    candidate_source: str
    candidate_title: str
    candidate_doi: Optional[str] = None
    candidate_year: Optional[int] = None

    @model_validator(mode="after")
    def _check_year_component(self):
        if self.y not in (0.0, 0.5, 1.0):
            raise ValueError(f"year agreement must be 0, 0.5 or 1 (got {self.y})")
        return self


def weighted_score(t, a, y, v):
    # unit components must sum to exactly 1.0
    return math.fsum((TITLE_WEIGHT * t, AUTHOR_WEIGHT * a, YEAR_WEIGHT * y, VENUE_WEIGHT * v))


def normalize_text(s: Optional[str]) -> List[str]:
    """
    Lowercase, NFC-normalize, turn punctuation and symbols into spaces and
    split on whitespace.

    >>> normalize_text("LLMs—and Hallucination")
    ['llms', 'and', 'hallucination']
    """
    if not s:
        return []
    s = unicodedata.normalize("NFC", s).lower()
    cleaned = "".join(
        " " if unicodedata.category(ch)[0] in ("P", "S") else ch
        for ch in s
    )
    return cleaned.split()


def normalized_query(s: Optional[str]) -> str:
    """Normalized token string used for cache keys and fixture lookups."""
    return " ".join(normalize_text(s))


def edit_ratio(x: str, z: str) -> float:
    """1 - Levenshtein(x, z) / max(len); two empty strings are identical."""
    if not x and not z:
        return 1.0
    return float(Levenshtein.normalized_similarity(x, z))


def token_set_ratio(x: Optional[str], z: Optional[str]) -> float:
    tokens_x = set(normalize_text(x))
    tokens_z = set(normalize_text(z))

    if tokens_x == tokens_z:
        return 1.0
    if not tokens_x or not tokens_z:
        return 0.0

    inter = " ".join(sorted(tokens_x & tokens_z))
    diff_x = " ".join(sorted(tokens_x - tokens_z))
    diff_z = " ".join(sorted(tokens_z - tokens_x))

    combined_x = f"{inter} {diff_x}".strip()
    combined_z = f"{inter} {diff_z}".strip()

    return max(
        edit_ratio(inter, combined_x),
        edit_ratio(inter, combined_z),
        edit_ratio(combined_x, combined_z),
    )


def partial_ratio(x: Optional[str], z: Optional[str]) -> float:
    a = normalized_query(x)
    b = normalized_query(z)
    shorter, longer = (a, b) if len(a) <= len(b) else (b, a)

    if not shorter:
        return 1.0 if not longer else 0.0
    if shorter in longer:
        return 1.0

    m = len(shorter)
    best = 0.0
    for start in range(len(longer) - m + 1):
        best = max(best, edit_ratio(shorter, longer[start:start + m]))
        if best == 1.0:
            break
    return best


def last_name(name: str) -> str:
    """
    Surname of a single author string.

    "Doe, J." -> "Doe"; "Jane Doe" -> "Doe"; "Doe" -> "Doe".
    """
    name = name.strip()
    if not name:
        return ""
    if "," in name:
        return name.split(",", 1)[0].strip()
    tokens = name.split()
    if len(tokens) == 1:
        return tokens[0]
    return HumanName(name).last or tokens[-1]


def normalize_name(name: str) -> str:
    folded = unidecode(name).lower()
    return re.sub(r"[^a-z0-9]", "", folded)


def _last_name_set(names: Optional[Sequence[str]]):
    result = set()
    for name in names or []:
        key = normalize_name(last_name(name))
        if key:
            result.add(key)
    return result


def author_overlap(parsed_authors: Optional[Sequence[str]], candidate_authors: Optional[Sequence[str]]) -> float:
    parsed = _last_name_set(parsed_authors)
    if not parsed:
        return 0.0
    candidate = _last_name_set(candidate_authors)
    return len(parsed & candidate) / len(parsed)


def year_agreement(parsed_year: Optional[int], candidate_year: Optional[int]) -> float:
    if parsed_year is None or candidate_year is None:
        return 0.0
    diff = abs(parsed_year - candidate_year)
    if diff == 0:
        return 1.0
    if diff == 1:
        return 0.5
    return 0.0


def score_candidate(parsed: "ParsedCitation", candidate: "CandidateRecord") -> MatchScore:
    t = token_set_ratio(parsed.title, candidate.title)
    a = author_overlap(parsed.authors, candidate.authors)
    y = year_agreement(parsed.year, candidate.year)
    v = partial_ratio(parsed.venue, candidate.venue) if parsed.venue and candidate.venue else 0.0

    return MatchScore(
        s=weighted_score(t, a, y, v),
        t=t,
        a=a,
        y=y,
        v=v,
        candidate_source=candidate.source.value,
        candidate_title=candidate.title,
        candidate_doi=candidate.doi,
        candidate_year=candidate.year,
    )


def best_match(parsed: "ParsedCitation", candidates: Sequence["CandidateRecord"]) -> Optional[MatchScore]:
    """Highest-scoring candidate; ties keep the earliest in retrieval order."""
    best = None
    for candidate in candidates:
        score = score_candidate(parsed, candidate)
        if best is None or score.s > best.s:
            best = score
    return best
