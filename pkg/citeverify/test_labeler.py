"""
Tests for the three-way labeling rule
"""

import pytest
from pydantic import ValidationError

from .claimset import YearWindow
from .indexclient import CandidateRecord, CandidateSet, Source
from .labeler import (
    Label,
    LabelerConfig,
    Verdict,
    VerdictRecord,
    citation_key,
    doi_presence,
    flag_temporal,
    label_citation,
    label_from_score,
    unresolved_verdict,
)
from .refparse import ParsedCitation

CFG = LabelerConfig()
WINDOW = YearWindow(start_year=2020, end_year=2025)


def parsed(title="Large Language Models for Code Review Automation", authors=("Chen", "Lee"),
           venue="Empirical Software Engineering", year=2023, doi=None, parse_ok=True):
    return ParsedCitation(citation_index=1, title=title, authors=list(authors) if authors else None,
                          venue=venue, year=year, doi=doi, parse_ok=parse_ok)


def candidate(year=2023, authors=("Chen, Wei", "Lee, Sun-Young")):
    return CandidateRecord(source=Source.FIXTURE, title="Large Language Models for Code Review Automation",
                           authors=list(authors), venue="Empirical Software Engineering", year=year,
                           doi="10.9999/emse.2023.5")


@pytest.mark.parametrize("score, expected", [
    (1.0, Label.EXISTING),
    (0.85, Label.EXISTING),
    (0.849, Label.UNRESOLVED),
    (0.60, Label.UNRESOLVED),
    (0.599, Label.FABRICATED),
    (0.0, Label.FABRICATED),
])
def test_label_from_score_boundaries(score, expected):
    assert label_from_score(score, CFG) == expected


def test_labeler_config_requires_ordered_thresholds():
    with pytest.raises(ValidationError):
        LabelerConfig(exist_threshold=0.5, unresolved_threshold=0.6)
    assert LabelerConfig(exist_threshold=0.9, unresolved_threshold=0.5).exist_threshold == 0.9


def test_exact_match_is_existing():
    verdict = label_citation(parsed(), [candidate()], CFG)
    assert verdict.label == Label.EXISTING
    assert verdict.best_score.s == 1.0
    assert verdict.citation_index == 1


def test_wrong_authors_are_unresolved():
    verdict = label_citation(parsed(authors=("Garcia", "Novak")), [candidate()], CFG)
    assert verdict.best_score.s == pytest.approx(0.80)
    assert verdict.label == Label.UNRESOLVED


def test_empty_candidates_are_fabricated():
    verdict = label_citation(parsed(), [], CFG)
    assert verdict.label == Label.FABRICATED
    assert verdict.best_score is None

    verdict = label_citation(parsed(), CandidateSet(citation_index=1), CFG)
    assert verdict.label == Label.FABRICATED


def test_parse_failure_is_unresolved_without_score():
    verdict = label_citation(parsed(title=None, parse_ok=False), [candidate()], CFG)
    assert verdict.label == Label.UNRESOLVED
    assert verdict.best_score is None
    assert not verdict.temporal_violation


def test_existing_uses_matched_year_for_temporal_flag():
    # off by one still matches, the record's year decides the window check
    verdict = label_citation(parsed(year=2020), [candidate(year=2019)], CFG, WINDOW)
    assert verdict.label == Label.EXISTING
    assert verdict.temporal_violation

    verdict = label_citation(parsed(year=2019), [candidate(year=2020)], CFG, WINDOW)
    assert verdict.label == Label.EXISTING
    assert not verdict.temporal_violation


def test_non_existing_uses_generated_year_for_temporal_flag():
    verdict = label_citation(parsed(year=2018), [], CFG, WINDOW)
    assert verdict.label == Label.FABRICATED
    assert verdict.temporal_violation
    assert not label_citation(parsed(year=2018), [], CFG).temporal_violation


@pytest.mark.parametrize("year, expected", [(2019, True), (2020, False), (2025, False), (2026, True), (None, False)])
def test_flag_temporal_window_is_inclusive(year, expected):
    assert flag_temporal(year, WINDOW) is expected
    assert flag_temporal(year, None) is False


def test_doi_presence():
    assert doi_presence(parsed(doi="10.9999/emse.2023.5"))
    assert not doi_presence(parsed())


def test_unresolved_verdict_marks_retrieval_failure():
    verdict = unresolved_verdict(parsed(year=2010, doi="10.9999/emse.2023.5"), WINDOW)
    assert verdict.label == Label.UNRESOLVED
    assert verdict.retrieval_failed
    assert verdict.temporal_violation
    assert verdict.doi_present


def test_existing_verdict_needs_score():
    with pytest.raises(ValidationError):
        Verdict(citation_index=0, label=Label.EXISTING)


def test_verdict_record_key():
    verdict = label_citation(parsed(), [candidate()], CFG)
    record = VerdictRecord.from_verdict(verdict, "C1", "model-a", "Survey", "SE & CS")
    assert record.key == "C1|model-a|Survey|1" == citation_key("C1", "model-a", "Survey", 1)
    assert record.best_score.candidate_doi == "10.9999/emse.2023.5"
    assert VerdictRecord.model_validate_json(record.model_dump_json()) == record
