"""
Tests for field similarity and candidate scoring
"""

import random

import pytest

from .indexclient import CandidateRecord, Source
from .matcher import (
    MatchScore,
    author_overlap,
    best_match,
    edit_ratio,
    last_name,
    normalize_text,
    normalized_query,
    partial_ratio,
    score_candidate,
    token_set_ratio,
    weighted_score,
    year_agreement,
)
from .refparse import ParsedCitation

WORDS = ["graph", "neural", "network", "networks", "learning", "deep", "code", "review",
         "vitamin", "d", "trial", "of", "the", "a", "in", "model", "large", "language",
         "résumé", "naïve", "bayes", "x-ray", "2021", "co-op"]
PUNCT = ["", "", "", ",", ".", ":", "!", "?", "—", "(", ")", "'s"]


# --- Reference implementations ---

def levenshtein(a, b):
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def reference_ratio(a, b):
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def reference_token_set(x, z):
    tx, tz = set(normalize_text(x)), set(normalize_text(z))
    if tx == tz:
        return 1.0
    if not tx or not tz:
        return 0.0
    inter = " ".join(sorted(tx & tz))
    cx = (inter + " " + " ".join(sorted(tx - tz))).strip()
    cz = (inter + " " + " ".join(sorted(tz - tx))).strip()
    return max(reference_ratio(inter, cx), reference_ratio(inter, cz), reference_ratio(cx, cz))


def reference_partial(x, z):
    a, b = normalized_query(x), normalized_query(z)
    shorter, longer = (a, b) if len(a) <= len(b) else (b, a)
    if not shorter:
        return 1.0 if not longer else 0.0
    m = len(shorter)
    return max(reference_ratio(shorter, longer[i:i + m]) for i in range(len(longer) - m + 1))


def random_phrase(rng):
    n = rng.randint(0, 7)
    words = [rng.choice(WORDS) + rng.choice(PUNCT) for _ in range(n)]
    if rng.random() < 0.3:
        words = [w.upper() if rng.random() < 0.5 else w.capitalize() for w in words]
    return " ".join(words)


def record(title, authors=None, venue=None, year=None, doi=None):
    return CandidateRecord(source=Source.FIXTURE, title=title, authors=authors or [], venue=venue, year=year, doi=doi)


def citation(title, authors=None, venue=None, year=None):
    return ParsedCitation(citation_index=0, title=title, authors=authors, venue=venue, year=year, parse_ok=True)


# --- Primitives ---

def test_normalize_text_strips_punctuation_and_symbols():
    assert normalize_text("LLMs—and Hallucination") == ["llms", "and", "hallucination"]
    assert normalize_text("A+B = C's (2021)!") == ["a", "b", "c", "s", "2021"]
    assert normalize_text("") == []
    assert normalize_text(None) == []


def test_normalize_text_composes_unicode():
    decomposed = "re\u0301sume\u0301"
    assert normalize_text(decomposed) == ["r\u00e9sum\u00e9"]
    assert token_set_ratio(decomposed, "R\u00c9SUM\u00c9") == 1.0


def test_edit_ratio_empty_strings_are_identical():
    assert edit_ratio("", "") == 1.0
    assert edit_ratio("abc", "") == 0.0
    assert edit_ratio("kitten", "sitting") == pytest.approx(1 - 3 / 7)


def test_token_set_ratio_ignores_order_and_duplicates():
    assert token_set_ratio("Deep Residual Learning", "learning, residual: DEEP deep") == 1.0
    assert token_set_ratio("", "") == 1.0
    assert token_set_ratio("graph", "") == 0.0
    assert token_set_ratio("!!!", "graph") == 0.0


def test_token_set_ratio_token_subset_is_perfect():
    # inter equals the shorter side
    assert token_set_ratio("graph networks", "graph neural networks") == 1.0
    partial = token_set_ratio("graph attention networks", "graph neural networks")
    assert partial == pytest.approx(reference_token_set("graph attention networks", "graph neural networks"))
    assert 0.5 < partial < 1.0


def test_partial_ratio_substring_is_perfect():
    assert partial_ratio("Software Engineering", "Empirical Software Engineering") == 1.0
    assert partial_ratio(None, None) == 1.0
    assert partial_ratio("", "venue") == 0.0


@pytest.mark.parametrize("seed", [7, 11, 2024])
def test_fuzzy_primitives_match_reference_on_random_pairs(seed):
    rng = random.Random(seed)
    for _ in range(400):
        x, z = random_phrase(rng), random_phrase(rng)
        if rng.random() < 0.2:
            z = x
        assert token_set_ratio(x, z) == pytest.approx(reference_token_set(x, z), abs=1e-12), (x, z)
        assert partial_ratio(x, z) == pytest.approx(reference_partial(x, z), abs=1e-12), (x, z)


def test_fuzzy_primitives_are_symmetric_and_bounded():
    rng = random.Random(3)
    for _ in range(300):
        x, z = random_phrase(rng), random_phrase(rng)
        for fn in (token_set_ratio, partial_ratio):
            value = fn(x, z)
            assert 0.0 <= value <= 1.0
            assert value == pytest.approx(fn(z, x), abs=1e-12)
        assert token_set_ratio(x, x) == 1.0
        assert partial_ratio(x, x) == 1.0


# --- Authors and years ---

@pytest.mark.parametrize("name, expected", [
    ("Doe, J.", "Doe"),
    ("Jane Doe", "Doe"),
    ("Doe", "Doe"),
    ("  ", ""),
    ("Sun-Young Lee", "Lee"),
])
def test_last_name(name, expected):
    assert last_name(name) == expected


def test_author_overlap_is_share_of_parsed_authors_found():
    assert author_overlap(["Doe", "Smith"], ["Doe, Jane", "Lee, K."]) == 0.5
    assert author_overlap(["Müller"], ["Muller, H."]) == 1.0
    assert author_overlap(["O'Brien"], ["Obrien, P."]) == 1.0
    assert author_overlap(None, ["Doe, J."]) == 0.0
    assert author_overlap([], ["Doe, J."]) == 0.0
    assert author_overlap(["Doe"], []) == 0.0


@pytest.mark.parametrize("parsed, candidate, expected", [
    (2021, 2021, 1.0),
    (2021, 2022, 0.5),
    (2021, 2020, 0.5),
    (2021, 2023, 0.0),
    (None, 2021, 0.0),
    (2021, None, 0.0),
])
def test_year_agreement(parsed, candidate, expected):
    assert year_agreement(parsed, candidate) == expected


# --- Weighted score ---

def test_weighted_score_vectors():
    assert weighted_score(1, 1, 1, 1) == 1.0
    assert weighted_score(1, 1, 0.5, 1) == pytest.approx(0.925)
    assert weighted_score(1, 0, 0, 0) == pytest.approx(0.6)
    assert weighted_score(0, 0, 0, 0) == 0.0


def test_score_candidate_exact_match_is_one():
    parsed = citation("Deep Residual Learning for Image Recognition", ["He", "Zhang"],
                      "IEEE Conference on Computer Vision and Pattern Recognition", 2016)
    candidate = record("Deep Residual Learning for Image Recognition", ["He, Kaiming", "Zhang, Xiangyu"],
                       "IEEE Conference on Computer Vision and Pattern Recognition", 2016, "10.9999/cvpr.2016.90")
    score = score_candidate(parsed, candidate)
    assert score.s == 1.0
    assert score.candidate_doi == "10.9999/cvpr.2016.90"
    assert score.candidate_source == "Fixture"


def test_score_candidate_missing_venue_scores_zero_venue():
    parsed = citation("Social Capital", ["Putnam"], None, 2022)
    candidate = record("Social Capital", ["Putnam, Robert"], "Journal of Urban Affairs", 2022)
    score = score_candidate(parsed, candidate)
    assert score.v == 0.0
    assert score.s == pytest.approx(0.95)

    score = score_candidate(citation("Social Capital", ["Putnam"], "Urban Affairs", 2022),
                            record("Social Capital", ["Putnam, Robert"], None, 2022))
    assert score.v == 0.0


def test_match_score_rejects_fractional_year_component():
    with pytest.raises(ValueError):
        MatchScore(s=0.5, t=0.5, a=0.5, y=0.25, v=0.5, candidate_source="Fixture", candidate_title="x")


def test_best_match_prefers_highest_and_keeps_first_on_ties():
    parsed = citation("Graph Attention Networks", ["Velickovic"], None, 2018)
    weak = record("Graph Networks", [], None, 2018)
    strong_first = record("Graph Attention Networks", ["Velickovic, Petar"], None, 2018, "10.9999/gnn.3")
    strong_second = record("Graph Attention Networks", ["Velickovic, P."], None, 2018, "10.9999/other")

    best = best_match(parsed, [weak, strong_first, strong_second])
    assert best.candidate_doi == "10.9999/gnn.3"
    assert best_match(parsed, []) is None
