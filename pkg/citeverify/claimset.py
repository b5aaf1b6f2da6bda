"""
Claim corpus, prompting conditions and prompt rendering.

Claims file: one JSON object per line with claim_id, domain, text and the
optional window ([start, end], inclusive) and anchors (keyword list).
"""

import json
import logging
import os
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ClaimFileError, DuplicateClaimError, InputError, MissingWindowError

logger = logging.getLogger(__name__)

DOMAINS = (
    "SE & CS",
    "Natural Sciences",
    "Medicine & Health",
    "Social Sciences",
    "Humanities",
    "Interdisciplinary",
)

TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), "templates")
TEMPLATE_FILES = ("base", "window", "survey", "nondisclosure", "anchors", "format")


class ConditionName(str, Enum):
    BASELINE = "Baseline"
    TEMPORAL = "Temporal"
    SURVEY = "Survey"
    NONDISCLOSURE = "NonDisclosure"
    COMBO = "Combo"


REQUESTED_CITATIONS = {
    ConditionName.BASELINE: 5,
    ConditionName.TEMPORAL: 5,
    ConditionName.SURVEY: 8,
    ConditionName.NONDISCLOSURE: 5,
    ConditionName.COMBO: 8,
}


class YearWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    start_year: int = Field(ge=1000, le=3000)
    end_year: int = Field(ge=1000, le=3000)

    @model_validator(mode="after")
    def _ordered(self):
        if self.start_year > self.end_year:
            raise ValueError(f"window start {self.start_year} is after end {self.end_year}")
        return self


class ClaimRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    claim_id: str = Field(min_length=1)
    domain: str
    text: str = Field(min_length=1)
    window: Optional[YearWindow] = None
    anchors: Optional[List[str]] = None

    @field_validator("domain")
    @classmethod
    def _known_domain(cls, value):
        if value not in DOMAINS:
            raise ValueError(f"unknown domain {value!r}; expected one of {', '.join(DOMAINS)}")
        return value

    @field_validator("window", mode="before")
    @classmethod
    def _window_pair(cls, value):
        if isinstance(value, (list, tuple)):
            if len(value) != 2:
                raise ValueError("window must be a [start, end] pair")
            return {"start_year": value[0], "end_year": value[1]}
        return value


class ConditionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: ConditionName
    requested_citations: int
    uses_window: bool = False
    survey_structure: bool = False
    nondisclosure_clause: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        expected = REQUESTED_CITATIONS[self.name]
        if self.requested_citations != expected:
            raise ValueError(f"{self.name.value} requests {expected} citations (got {self.requested_citations})")
        if self.name == ConditionName.COMBO and not (
            self.uses_window and self.survey_structure and self.nondisclosure_clause
        ):
            raise ValueError("Combo combines the window, survey and non-disclosure constraints")
        return self


class RunSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    claim_id: str
    condition: str
    model_id: str


class TemplateSet(BaseModel):
    base: str
    window: str
    survey: str
    nondisclosure: str
    anchors: str
    format: str


class ClaimSet:
    """Ordered, read-only claim collection with lookup by id."""

    def __init__(self, records: Iterable[ClaimRecord]):
        self._records = []
        self._by_id = {}
        for record in records:
            if record.claim_id in self._by_id:
                raise DuplicateClaimError("Duplicate claim_id", claim_id=record.claim_id)
            self._records.append(record)
            self._by_id[record.claim_id] = record

    def __iter__(self) -> Iterator[ClaimRecord]:
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def __contains__(self, claim_id):
        return claim_id in self._by_id

    def get(self, claim_id) -> Optional[ClaimRecord]:
        return self._by_id.get(claim_id)

    def __getitem__(self, claim_id) -> ClaimRecord:
        return self._by_id[claim_id]

    @property
    def ids(self) -> List[str]:
        return [r.claim_id for r in self._records]

    def domain_counts(self) -> Dict[str, int]:
        counts = Counter(r.domain for r in self._records)
        return {domain: counts[domain] for domain in DOMAINS if counts[domain]}


def standard_conditions() -> List[ConditionSpec]:
    return [
        ConditionSpec(name=ConditionName.BASELINE, requested_citations=5),
        ConditionSpec(name=ConditionName.TEMPORAL, requested_citations=5, uses_window=True),
        ConditionSpec(name=ConditionName.SURVEY, requested_citations=8, survey_structure=True),
        ConditionSpec(name=ConditionName.NONDISCLOSURE, requested_citations=5, nondisclosure_clause=True),
        ConditionSpec(
            name=ConditionName.COMBO,
            requested_citations=8,
            uses_window=True,
            survey_structure=True,
            nondisclosure_clause=True,
        ),
    ]


def condition_by_name(name: str) -> ConditionSpec:
    for condition in standard_conditions():
        if condition.name.value.lower() == str(name).lower():
            return condition
    raise InputError(f"Unknown condition: {name!r}")


def load_claims(path) -> ClaimSet:
    """
    Load the claims file.

    Raises:
        ClaimFileError: unreadable file or malformed record (names line and claim_id)
        DuplicateClaimError: a claim_id occurs twice
    """
    path = Path(path)
    if not path.exists():
        raise ClaimFileError(f"Claims file not found: {path}")

    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ClaimFileError(f"Invalid JSON: {e.msg}", line=line_no) from e

            claim_id = data.get("claim_id") if isinstance(data, dict) else None
            try:
                record = ClaimRecord.model_validate(data)
            except ValidationError as e:
                first = e.errors()[0]
                field = ".".join(str(p) for p in first["loc"]) or "record"
                raise ClaimFileError(f"Malformed claim record: {field}: {first['msg']}",
                                     line=line_no, claim_id=claim_id) from e

            if record.claim_id in seen:
                raise DuplicateClaimError("Duplicate claim_id", line=line_no, claim_id=record.claim_id)
            seen.add(record.claim_id)
            records.append(record)

    claims = ClaimSet(records)
    counts = ", ".join(f"{domain}: {n}" for domain, n in claims.domain_counts().items())
    logger.info(f"Loaded {len(claims)} claims from {path} ({counts})")
    return claims


def expand_runs(claims: Iterable[ClaimRecord], conditions: Sequence[ConditionSpec], models: Sequence[str]) -> List[RunSpec]:
    """Claim-major run grid: claims x conditions x models."""
    claims = list(claims)
    if not claims or not conditions or not models:
        raise InputError("expand_runs needs at least one claim, one condition and one model")

    return [
        RunSpec(claim_id=claim.claim_id, condition=condition.name.value, model_id=model)
        for claim in claims
        for condition in conditions
        for model in models
    ]


def load_templates(directory=TEMPLATE_DIR) -> TemplateSet:
    directory = Path(directory)
    fragments = {}
    for name in TEMPLATE_FILES:
        path = directory / f"{name}.txt"
        try:
            fragments[name] = path.read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"Cannot read template {path}: {e}") from e
    return TemplateSet(**fragments)


def render_prompt(claim: ClaimRecord, condition: ConditionSpec, templates: TemplateSet) -> str:
    """
    Assemble the prompt for one (claim, condition).

    Fragments are appended in a fixed order: base, window, survey,
    non-disclosure, anchors, format. Anchors are included under every
    condition when the claim has them.
    """
    if condition.uses_window and claim.window is None:
        raise MissingWindowError(claim.claim_id, condition.name.value)

    values = {
        "claim": claim.text,
        "k": condition.requested_citations,
        "start": claim.window.start_year if claim.window else "",
        "end": claim.window.end_year if claim.window else "",
        "anchors": ", ".join(claim.anchors or []),
    }

    fragments = [templates.base]
    if condition.uses_window:
        fragments.append(templates.window)
    if condition.survey_structure:
        fragments.append(templates.survey)
    if condition.nondisclosure_clause:
        fragments.append(templates.nondisclosure)
    if claim.anchors:
        fragments.append(templates.anchors)
    fragments.append(templates.format)

    return "\n\n".join(fragment.strip().format_map(values) for fragment in fragments) + "\n"


def stratified_sample_claims(pool: Iterable[ClaimRecord], per_domain: int, seed: int,
                             domains: Optional[Sequence[str]] = None) -> ClaimSet:
    """
    Draw `per_domain` claims from every domain of a candidate pool.

    Args:
        pool: candidate claims, in file order
        per_domain: claims to keep per domain group
        seed: sampling seed
        domains: groups to sample (default: every group present in the pool)

    Returns:
        ClaimSet ordered by domain group, then pool order
    """
    pool = list(pool)
    by_domain = {}
    for record in pool:
        by_domain.setdefault(record.domain, []).append(record)

    if domains is None:
        domains = [d for d in DOMAINS if d in by_domain]

    rng = np.random.default_rng(seed)
    sampled = []
    for domain in domains:
        candidates = by_domain.get(domain, [])
        if len(candidates) < per_domain:
            raise InputError(f"Domain {domain!r} has {len(candidates)} candidates, need {per_domain}")
        chosen = sorted(rng.choice(len(candidates), size=per_domain, replace=False).tolist())
        sampled.extend(candidates[i] for i in chosen)

    logger.info(f"Sampled {len(sampled)} claims ({per_domain} per domain, seed {seed})")
    return ClaimSet(sampled)
