"""
Reference list extraction and rule-based field parsing.

Model outputs are a prose paragraph followed by a reference list. The list is
located (heading or first enumerated entry), split into raw entries and each
entry is decomposed into title / authors / venue / year / DOI / URL.

Accepted layouts, tried in this order for every entry:
  1. labeled fields      Title: ... | Authors: ... | Venue: ... | Year: ... | DOI: ...
  2. quoted title        J. Doe and A. Smith, "A Study of Things," Venue, 2021.
  3. author-year         Doe, J., & Smith, A. (2021). A Study of Things. Venue, 12(3).
  4. Vancouver           Doe J, Smith A. A Study of Things. Venue. 2021;12(3):1-9.
  5. sentence fallback   Authors. Title. Venue. 2021.
"""

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import CorpusFileError

logger = logging.getLogger(__name__)

YEAR_MIN = 1000
YEAR_MAX = 3000

DOI_RE = re.compile(r"10\.\d{4,9}/[^\s\"<>|]+", re.I)
VALID_DOI_RE = re.compile(r"^10\.\d{4,9}/\S+$", re.I)
URL_RE = re.compile(r"https?://[^\s<>\"|]+", re.I)
YEAR_RE = re.compile(r"(?<!\d)(\d{4})(?!\d)")

# Enumeration markers at line start: [1], (1), 1. 1) and bullets
ENUM_RE = re.compile(r"^\s*(?:\[\d{1,3}\]|\(\d{1,3}\)|\d{1,3}[.)]|[-*•])\s+")
FIRST_ENTRY_RE = re.compile(r"^\s*(?:\[1\]|\(1\)|1[.)])\s+")

HEADING_RE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:\*\*|__)?\s*"
    r"(?:references|reference list|bibliography|works cited|literature cited|citations|sources)"
    r"\s*:?\s*(?:\*\*|__)?\s*:?\s*$",
    re.I | re.M,
)

LABEL_RE = re.compile(
    r"(?<![\w/.])(title|authors?|venue|journal|year|doi|url)\s*\**\s*:",
    re.I,
)
TITLE_LINE_RE = re.compile(r"^\s*(?:\*\*|__)?\s*title\s*\**\s*:", re.I)

QUOTED_RE = re.compile(r"[\"“”](?P<title>[^\"“”]{3,}?)[\"“”]")
AUTHOR_YEAR_RE = re.compile(
    r"^(?P<authors>.+?)\s*\(\s*(?P<year>\d{4})[a-z]?\s*\)\s*[.,:]?\s*(?P<rest>.*)$",
    re.S,
)

# Vancouver / NLM: "Smith J, Doe AB. Title. Venue. 2021;5(2):1-10."
_NLM_NAME = r"[^\W\d_][\w'’\-]*(?:\s+[^\W\d_][\w'’\-]*)*?\s+[A-Z]{1,3}"
VANCOUVER_AUTHORS_RE = re.compile(
    rf"^(?P<authors>{_NLM_NAME}(?:\s*,\s*{_NLM_NAME})*(?:\s*,?\s*et\s+al)?)\.\s+(?P<rest>.+)$"
)
VANCOUVER_YEAR_RE = re.compile(r"(?<=\.)\s*(?P<year>\d{4})(?:\s+[A-Z][a-z]{2}(?:\s+\d{1,2})?)?\s*(?:[;:]|\.?\s*$)")

ETAL_RE = re.compile(r"\bet\s+al\b\.?", re.I)
AUTHOR_SEP_RE = re.compile(r"\s*;\s*|\s*,?\s+and\s+|\s*&\s*", re.I)
APA_PAIR_RE = re.compile(r"([^\W\d][\w'’\-]*(?:\s+[^\W\d][\w'’\-]*)*)\s*,\s*((?:[A-Z]\.\s*-?\s*)+)")
INITIALS_RE = re.compile(r"^(?:[A-Z]\.?\s*-?\s*)+$")
LEADING_INITIAL_RE = re.compile(r"^[A-Z]\.")
VENUE_CUT_RE = re.compile(r",\s*(?:vol\b|volume\b|no\b|pp\b|pages\b|\d)|\s+\d+\s*\(|\s+vol\.", re.I)
# Sentence breaks, except after a lone initial as in "J. Doe"
SENTENCE_RE = re.compile(r"(?<=[.?!])(?<!\b[A-Z]\.)\s+")


class ModelOutput(BaseModel):
    claim_id: str
    model_id: str
    condition: str
    output_text: str


class ParsedCitation(BaseModel):
    citation_index: int = Field(ge=0)
    title: Optional[str] = None
    authors: Optional[List[str]] = None
    venue: Optional[str] = None
    year: Optional[int] = None
    doi: Optional[str] = None
    url: Optional[str] = None
    parse_ok: bool = False
    raw: str = ""

    @field_validator("year")
    @classmethod
    def _year_in_range(cls, value):
        if value is not None and not YEAR_MIN <= value <= YEAR_MAX:
            raise ValueError(f"year {value} outside [{YEAR_MIN}, {YEAR_MAX}]")
        return value

    @field_validator("doi")
    @classmethod
    def _doi_syntax(cls, value):
        if value is not None and not VALID_DOI_RE.match(value):
            raise ValueError(f"not a DOI: {value!r}")
        return value


# --- Reference block extraction ---

def extract_reference_block(output_text: str) -> List[str]:
    """
    Returns the raw reference strings found after the prose body, in output
    order, with enumeration markers removed. Missing list -> [].
    """
    if not output_text:
        return []

    text = output_text.replace("\r\n", "\n")
    headings = list(HEADING_RE.finditer(text))

    if headings:
        block = text[headings[-1].end():]
    else:
        lines = text.split("\n")
        start = next(
            (i for i, line in enumerate(lines) if FIRST_ENTRY_RE.match(line) or TITLE_LINE_RE.match(line)),
            None,
        )
        if start is None:
            return []
        block = "\n".join(lines[start:])

    lines = block.split("\n")
    if any(ENUM_RE.match(line) for line in lines):
        entries = _split_enumerated(lines)
    elif any(TITLE_LINE_RE.match(line) for line in lines):
        entries = _split_labeled_blocks(lines)
    else:
        entries = [line.strip() for line in lines if line.strip()]

    return [entry for entry in entries if entry]


def _split_enumerated(lines):
    entries = []
    current = None
    previous_blank = False

    for line in lines:
        if ENUM_RE.match(line):
            if current is not None:
                entries.append("\n".join(current).strip())
            current = [ENUM_RE.sub("", line, count=1).strip()]
        elif not line.strip():
            previous_blank = True
            continue
        elif current is not None:
            # Continuation: indented, a field label, or directly below the entry
            if line[:1].isspace() or LABEL_RE.match(line.strip()) or not previous_blank:
                current.append(line.strip())
        previous_blank = False

    if current is not None:
        entries.append("\n".join(current).strip())
    return entries


def _split_labeled_blocks(lines):
    entries = []
    current = []

    for line in lines:
        if not line.strip() or TITLE_LINE_RE.match(line):
            if current:
                entries.append("\n".join(current).strip())
                current = []
            if not line.strip():
                continue
        current.append(line.strip())

    if current:
        entries.append("\n".join(current).strip())
    return entries


# --- Field helpers ---

def _find_doi(text):
    if not text:
        return None
    match = DOI_RE.search(text)
    if not match:
        return None
    doi = match.group(0).rstrip(".,;:'")
    # Drop a closing bracket that belongs to the surrounding text
    while doi and doi[-1] in ")]}" and doi.count(doi[-1]) > doi.count({")": "(", "]": "[", "}": "{"}[doi[-1]]):
        doi = doi[:-1].rstrip(".,;:")
    return doi if VALID_DOI_RE.match(doi) else None


def _find_url(text):
    if not text:
        return None
    match = URL_RE.search(text)
    if not match:
        return None
    return match.group(0).rstrip(".,;:)]'")


def _find_year(text):
    for match in YEAR_RE.finditer(text or ""):
        year = int(match.group(1))
        if YEAR_MIN <= year <= YEAR_MAX:
            return year
    return None


def _usable_title(title):
    return bool(title) and re.search(r"[^\W\d_]{2,}", title) is not None


def _clean_title(title):
    if not title:
        return None
    title = title.strip().strip("*_").strip()
    title = title.strip(" |;,\"“”'")
    if title.endswith("."):
        title = title[:-1].rstrip()
    return title or None


def _clean_venue(venue):
    if not venue:
        return None
    venue = DOI_RE.sub("", URL_RE.sub("", venue))
    venue = re.sub(r"(?i)\b(?:doi|url|available at|retrieved from)\s*:?\s*$", "", venue.strip())
    cut = VENUE_CUT_RE.search(venue)
    if cut:
        venue = venue[:cut.start()]
    venue = re.sub(r"^(?:In|in)\s*:?\s+", "", venue.strip())
    venue = re.sub(r"\(?\b\d{4}\b\)?\s*$", "", venue).strip()
    venue = venue.strip(" .,;:|*_\"“”")
    return venue if _usable_title(venue) else None


def _final_token(name):
    tokens = [tok.strip(".,;:*") for tok in name.split()]
    tokens = [tok for tok in tokens if tok]
    # Vancouver style "Doe JK": skip trailing initials
    while len(tokens) > 1 and (INITIALS_RE.match(tokens[-1]) or (tokens[-1].isupper() and len(tokens[-1]) <= 3)):
        tokens.pop()
    return tokens[-1] if tokens else ""


def _split_authors(block):
    if not block:
        return []

    block = ETAL_RE.sub("", block)
    names = []
    for chunk in AUTHOR_SEP_RE.split(block):
        chunk = chunk.strip(" ,;*_")
        if not chunk:
            continue

        # "M. Bolland, A. Grey" is initials-first, not "Last, I." pairs
        pairs = [] if LEADING_INITIAL_RE.match(chunk) else APA_PAIR_RE.findall(chunk)
        if pairs:
            names.extend(_final_token(family) for family, _ in pairs)
            continue

        for piece in chunk.split(","):
            piece = piece.strip(" .")
            if piece and not INITIALS_RE.match(piece):
                names.append(_final_token(piece))

    return [name for name in names if name and re.search(r"[^\W\d_]", name)]


# --- Layout parsers ---

def _parse_labeled(text) -> Optional[Dict]:
    labels = list(LABEL_RE.finditer(text))
    if not any(match.group(1).lower() == "title" for match in labels):
        return None

    values = {}
    for i, match in enumerate(labels):
        end = labels[i + 1].start() if i + 1 < len(labels) else len(text)
        value = text[match.end():end].strip().strip("*_").strip(" |;\n")
        key = match.group(1).lower()
        key = {"author": "authors", "journal": "venue"}.get(key, key)
        values.setdefault(key, value)

    url = _find_url(values.get("url"))
    doi = _find_doi(values.get("doi")) if "doi" in values else None
    if doi is None and "doi" not in values and url:
        doi = _find_doi(url)

    return {
        "title": _clean_title(values.get("title")),
        "authors": _split_authors(values.get("authors")),
        "venue": _clean_venue(values.get("venue")),
        "year": _find_year(values.get("year")),
        "doi": doi,
        "url": url,
    }


def _parse_quoted(text, scrubbed) -> Optional[Dict]:
    match = QUOTED_RE.search(scrubbed)
    if not match:
        return None
    title = _clean_title(match.group("title").rstrip(","))
    if not _usable_title(title):
        return None

    before = scrubbed[:match.start()].strip(" ,.")
    after = scrubbed[match.end():].lstrip(" ,.")
    venue_part = re.split(r",|\(", after, maxsplit=1)[0] if after else None

    return {
        "title": title,
        "authors": _split_authors(before),
        "venue": _clean_venue(venue_part),
        "year": _find_year(scrubbed[:match.start()] + " " + scrubbed[match.end():]),
    }


def _parse_author_year(text, scrubbed) -> Optional[Dict]:
    match = AUTHOR_YEAR_RE.match(scrubbed)
    if not match:
        return None
    year = int(match.group("year"))
    sentences = [s for s in SENTENCE_RE.split(match.group("rest").strip()) if s.strip()]
    if not sentences:
        return None
    title = _clean_title(sentences[0])
    if not _usable_title(title):
        return None

    return {
        "title": title,
        "authors": _split_authors(match.group("authors")),
        "venue": _clean_venue(sentences[1]) if len(sentences) > 1 else None,
        "year": year if YEAR_MIN <= year <= YEAR_MAX else None,
    }


def _parse_vancouver(text, scrubbed) -> Optional[Dict]:
    match = VANCOUVER_AUTHORS_RE.match(scrubbed)
    if not match:
        return None
    rest = match.group("rest")
    # the year follows the venue ("Venue. 2021;"), so a year inside the title is never taken
    year_match = VANCOUVER_YEAR_RE.search(rest)
    if not year_match:
        return None

    head = [s.strip() for s in SENTENCE_RE.split(rest[:year_match.start()].strip()) if s.strip()]
    if not head:
        return None
    if len(head) == 1:
        title, venue = head[0], None
    else:
        title, venue = " ".join(head[:-1]), head[-1]
    title = _clean_title(title)
    if not _usable_title(title):
        return None

    year = int(year_match.group("year"))
    return {
        "title": title,
        "authors": _split_authors(match.group("authors")),
        "venue": _clean_venue(venue),
        "year": year if YEAR_MIN <= year <= YEAR_MAX else None,
    }


def _looks_like_authors(segment):
    return bool(
        re.search(r",\s*[A-Z]\.", segment)
        or re.search(r"\b[A-Z]\.\s*[A-Z][a-z]", segment)
        or re.search(r"\s(?:and|&)\s", segment)
        or ETAL_RE.search(segment)
    )


def _parse_fallback(text, scrubbed) -> Dict:
    sentences = [s.strip() for s in SENTENCE_RE.split(scrubbed) if s.strip()]
    authors, title, venue = [], None, None

    if len(sentences) >= 2 and _looks_like_authors(sentences[0]):
        authors = _split_authors(sentences[0])
        title = _clean_title(sentences[1])
        venue = _clean_venue(sentences[2]) if len(sentences) > 2 else None
    elif sentences:
        title = _clean_title(sentences[0])
        venue = _clean_venue(sentences[1]) if len(sentences) > 1 else None

    if not _usable_title(title):
        title = None
    rest = scrubbed.replace(title, " ") if title else scrubbed

    return {
        "title": title,
        "authors": authors,
        "venue": venue,
        "year": _find_year(rest),
    }


def _parse(raw, index):
    text = ENUM_RE.sub("", raw or "", count=1).strip()

    fields = _parse_labeled(text)
    if fields is None:
        flat = re.sub(r"\s+", " ", text)
        url = _find_url(flat)
        doi = _find_doi(flat)
        scrubbed = re.sub(r"(?i)\b(?:doi|url)\s*:\s*(?:n/?a\b)?", " ", URL_RE.sub(" ", DOI_RE.sub(" ", flat)))
        scrubbed = re.sub(r"\s+", " ", scrubbed).strip()

        fields = (
            _parse_quoted(flat, scrubbed)
            or _parse_author_year(flat, scrubbed)
            or _parse_vancouver(flat, scrubbed)
            or _parse_fallback(flat, scrubbed)
        )
        fields["doi"] = doi
        fields["url"] = url

    title = fields.get("title") if _usable_title(fields.get("title")) else None
    if title is None:
        return ParsedCitation(citation_index=index, raw=raw or "", parse_ok=False)

    return ParsedCitation(
        citation_index=index,
        title=title,
        authors=fields.get("authors") or None,
        venue=fields.get("venue"),
        year=fields.get("year"),
        doi=fields.get("doi"),
        url=fields.get("url"),
        parse_ok=True,
        raw=raw,
    )


def parse_reference(raw: str, index: int) -> ParsedCitation:
    """
    Parse one raw reference string. Never raises: anything that cannot be
    decomposed comes back with parse_ok=False.
    """
    try:
        return _parse(raw, index)
    except (ValidationError, ValueError, TypeError, re.error) as e:
        logger.warning(f"Could not parse reference {index}: {e}")
        return ParsedCitation(citation_index=max(index, 0), raw=raw if isinstance(raw, str) else "", parse_ok=False)


def count_citations(parsed: List[ParsedCitation]) -> int:
    return len(parsed)


def count_compliance(parsed: List[ParsedCitation], requested: int) -> int:
    """Realized minus requested citation count (recorded, never enforced)."""
    return count_citations(parsed) - requested


def format_reference(citation: ParsedCitation) -> str:
    """Serialize known fields into the canonical labeled one-line layout."""
    parts = [f"Title: {citation.title or ''}"]
    if citation.authors:
        parts.append(f"Authors: {'; '.join(citation.authors)}")
    if citation.venue:
        parts.append(f"Venue: {citation.venue}")
    if citation.year is not None:
        parts.append(f"Year: {citation.year}")
    if citation.doi:
        parts.append(f"DOI: {citation.doi}")
    if citation.url:
        parts.append(f"URL: {citation.url}")
    return " | ".join(parts)


def parse_output(output: ModelOutput) -> List[ParsedCitation]:
    raw_entries = extract_reference_block(output.output_text)
    if not raw_entries:
        logger.warning(f"No reference list found for {output.claim_id}/{output.model_id}/{output.condition}")
    return [parse_reference(raw, i) for i, raw in enumerate(raw_entries)]


def load_model_outputs(path) -> List[ModelOutput]:
    """
    Read the model-output corpus (one JSON object per line).
    """
    path = Path(path)
    if not path.exists():
        raise CorpusFileError(f"Model output corpus not found: {path}")

    outputs = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                output = ModelOutput.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise CorpusFileError(f"{path}:{line_no}: malformed model output: {e}") from e

            key = (output.claim_id, output.model_id, output.condition)
            if key in seen:
                raise CorpusFileError(f"{path}:{line_no}: duplicate output for {key}")
            seen.add(key)
            outputs.append(output)

    logger.info(f"Loaded {len(outputs)} model outputs from {path}")
    return outputs
