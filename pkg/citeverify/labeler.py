import logging
from enum import Enum
from typing import Iterable, Optional, Union

from pydantic import BaseModel, Field, model_validator

from .claimset import YearWindow
from .indexclient import CandidateRecord, CandidateSet
from .matcher import MatchScore, best_match
from .refparse import VALID_DOI_RE, ParsedCitation

logger = logging.getLogger(__name__)


class Label(str, Enum):
    EXISTING = "Existing"
    UNRESOLVED = "Unresolved"
    FABRICATED = "Fabricated"


LABELS = (Label.EXISTING, Label.UNRESOLVED, Label.FABRICATED)


class LabelerConfig(BaseModel):
    exist_threshold: float = 0.85
    unresolved_threshold: float = 0.60

    @model_validator(mode="after")
    def _ordered_thresholds(self):
        if not 0 < self.unresolved_threshold < self.exist_threshold <= 1:
            raise ValueError(
                f"need 0 < unresolved_threshold < exist_threshold <= 1 "
                f"(got {self.unresolved_threshold}, {self.exist_threshold})"
            )
        return self


class Verdict(BaseModel):
    citation_index: int = Field(ge=0)
    label: Label
    best_score: Optional[MatchScore] = None
    temporal_violation: bool = False
    doi_present: bool = False
    retrieval_failed: bool = False

    @model_validator(mode="after")
    def _existing_needs_score(self):
        if self.label == Label.EXISTING and self.best_score is None:
            raise ValueError("an Existing verdict needs a best_score")
        return self


class VerdictRecord(BaseModel):
    """One line of verdicts.jsonl: a Verdict placed in its run."""

    claim_id: str
    model_id: str
    condition: str
    domain: str
    citation_index: int = Field(ge=0)
    label: Label
    best_score: Optional[MatchScore] = None
    temporal_violation: bool = False
    doi_present: bool = False
    retrieval_failed: bool = False

    @property
    def key(self) -> str:
        return citation_key(self.claim_id, self.model_id, self.condition, self.citation_index)

    @classmethod
    def from_verdict(cls, verdict: Verdict, claim_id, model_id, condition, domain):
        return cls(
            claim_id=claim_id,
            model_id=model_id,
            condition=condition,
            domain=domain,
            **verdict.model_dump(),
        )


def citation_key(claim_id, model_id, condition, citation_index) -> str:
    return f"{claim_id}|{model_id}|{condition}|{citation_index}"


def label_from_score(s: float, cfg: LabelerConfig) -> Label:
    if s >= cfg.exist_threshold:
        return Label.EXISTING
    if s >= cfg.unresolved_threshold:
        return Label.UNRESOLVED
    return Label.FABRICATED


def flag_temporal(year: Optional[int], window: Optional[YearWindow]) -> bool:
    if year is None or window is None:
        return False
    return not window.start_year <= year <= window.end_year


def doi_presence(parsed: ParsedCitation) -> bool:
    return bool(parsed.doi) and VALID_DOI_RE.match(parsed.doi) is not None


def label_citation(
    parsed: ParsedCitation,
    candidates: Union[CandidateSet, Iterable[CandidateRecord]],
    cfg: LabelerConfig,
    window: Optional[YearWindow] = None,
) -> Verdict:
    """
    Three-way verdict for one citation.

    Parse failures are Unresolved without a score; an empty candidate set is
    Fabricated. Otherwise the best candidate score is cut at the two
    thresholds (half-open intervals). The temporal flag uses the matched
    record's year for Existing citations and the generated year otherwise.
    """
    doi_present = doi_presence(parsed)

    if not parsed.parse_ok:
        return Verdict(
            citation_index=parsed.citation_index,
            label=Label.UNRESOLVED,
            temporal_violation=flag_temporal(parsed.year, window),
            doi_present=doi_present,
        )

    records = candidates.candidates if isinstance(candidates, CandidateSet) else list(candidates)
    best = best_match(parsed, records)

    if best is None:
        label = Label.FABRICATED
        year = parsed.year
    else:
        label = label_from_score(best.s, cfg)
        year = parsed.year
        if label == Label.EXISTING and best.candidate_year is not None:
            year = best.candidate_year

    return Verdict(
        citation_index=parsed.citation_index,
        label=label,
        best_score=best,
        temporal_violation=flag_temporal(year, window),
        doi_present=doi_present,
    )


def unresolved_verdict(parsed: ParsedCitation, window: Optional[YearWindow] = None) -> Verdict:
    """Verdict for a citation whose lookups all failed."""
    return Verdict(
        citation_index=parsed.citation_index,
        label=Label.UNRESOLVED,
        temporal_violation=flag_temporal(parsed.year, window),
        doi_present=doi_presence(parsed),
        retrieval_failed=True,
    )
