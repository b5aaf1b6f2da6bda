"""
Aggregate statistics over verdicts.

Rates are citation-weighted within a model x condition cell. Uncertainty
comes from a percentile cluster bootstrap that resamples whole claims. Each
resample draws from its own numpy substream (SeedSequence(seed).spawn), so a
run split over worker threads reproduces the serial result exactly.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .claimset import standard_conditions
from .errors import (
    AuditFileError,
    ClaimSetMismatchError,
    EmptyCellError,
    InsufficientClustersError,
    KappaUndefinedError,
    UnknownGroupKeyError,
)
from .labeler import LABELS, Label, VerdictRecord

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9
STATISTICS = ("existing", "unresolved", "fabricated", "temporal_violation", "doi_present")
GROUP_KEYS = {"domain": "domain", "model": "model_id", "condition": "condition"}
BASELINE = "Baseline"


# --- Types ---

class CellMetrics(BaseModel):
    model_id: str
    condition: str
    n_claims: int = Field(ge=1)
    n_citations: int = Field(ge=1)
    existing_rate: float = Field(ge=0.0, le=1.0)
    fabricated_rate: float = Field(ge=0.0, le=1.0)
    unresolved_rate: float = Field(ge=0.0, le=1.0)
    temporal_violation_rate: float = Field(ge=0.0, le=1.0)
    avg_citations: float
    existing_ci: Optional[Tuple[float, float]] = None
    fabricated_ci: Optional[Tuple[float, float]] = None
    unresolved_ci: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _partition(self):
        total = self.existing_rate + self.fabricated_rate + self.unresolved_rate
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"label rates sum to {total}, not 1")
        for name in ("existing", "fabricated", "unresolved"):
            ci = getattr(self, f"{name}_ci")
            point = getattr(self, f"{name}_rate")
            if ci is not None and not ci[0] <= point <= ci[1]:
                raise ValueError(f"{name} CI {ci} does not contain {point}")
        return self


class ClaimFraction(BaseModel):
    claim_id: str
    f: float = Field(ge=0.0, le=1.0)
    n_existing: int = Field(ge=0)
    n_citations: int = Field(ge=1)


class RateDifference(BaseModel):
    label: str = ""
    delta: float
    ci_low: float
    ci_high: float
    excludes_zero: bool
    n_claims: int = 0

    @model_validator(mode="after")
    def _excludes_zero_matches_ci(self):
        if self.excludes_zero != (not self.ci_low <= 0.0 <= self.ci_high):
            raise ValueError("excludes_zero must be true exactly when 0 lies outside the CI")
        return self


class ConfusionMatrix3(BaseModel):
    """counts[pipeline][human], both indexed Existing, Unresolved, Fabricated."""

    counts: List[List[int]]

    @field_validator("counts")
    @classmethod
    def _shape(cls, value):
        if len(value) != 3 or any(len(row) != 3 for row in value):
            raise ValueError("confusion matrix must be 3x3")
        if any(c < 0 for row in value for c in row):
            raise ValueError("confusion counts must be non-negative")
        if sum(sum(row) for row in value) == 0:
            raise ValueError("confusion matrix is empty")
        return value

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def as_array(self):
        return np.array(self.counts, dtype=np.int64)


class AuditRates(BaseModel):
    """What audited Unresolved citations turned out to be."""

    existing: float = Field(ge=0.0, le=1.0)
    unresolved: float = Field(ge=0.0, le=1.0)
    fabricated: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.existing + self.unresolved + self.fabricated
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"audit rates sum to {total}, not 1")
        return self


class FractionSummary(BaseModel):
    n_claims: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    n_outliers: int
    strict_rate: float


class GroupRate(BaseModel):
    group: str
    n_claims: int
    n_citations: int
    existing_rate: float


class CellSelector(BaseModel):
    models: List[str]
    conditions: List[str]

    def matches(self, verdict) -> bool:
        return verdict.model_id in self.models and verdict.condition in self.conditions


class Contrast(BaseModel):
    label: str
    a: CellSelector
    b: CellSelector
    paired: bool = True


class RunCount(BaseModel):
    """One model run: how many citations its output carried (0 when no reference list was found)."""

    claim_id: str
    model_id: str
    condition: str
    n_citations: int = Field(ge=0)


class AuditRow(BaseModel):
    key: str
    pipeline_label: Label
    human_label: Label


# --- Tallies ---

def _frame(verdicts) -> pd.DataFrame:
    rows = [
        {
            "claim_id": v.claim_id,
            "existing": int(v.label == Label.EXISTING),
            "unresolved": int(v.label == Label.UNRESOLVED),
            "fabricated": int(v.label == Label.FABRICATED),
            "temporal_violation": int(v.temporal_violation),
            "doi_present": int(v.doi_present),
        }
        for v in verdicts
    ]
    return pd.DataFrame(rows, columns=["claim_id", *STATISTICS])


def _claim_tallies(verdicts, claim_ids=None) -> pd.DataFrame:
    """
    Per-claim integer counts, one row per claim sorted by claim_id. Claims in
    claim_ids without any citation get an all-zero row.
    """
    df = _frame(verdicts)
    tallies = df.groupby("claim_id", sort=True)[list(STATISTICS)].sum()
    tallies["n"] = df.groupby("claim_id", sort=True).size()
    if claim_ids is not None:
        tallies = tallies.reindex(sorted(set(claim_ids) | set(tallies.index)), fill_value=0)
    return tallies.astype(np.int64)


def _ratio(numerator, denominator):
    # a resample of zero-citation claims only has no rate
    return numerator / denominator if denominator else np.nan


def _cell_label(values):
    distinct = list(dict.fromkeys(values))
    return "+".join(distinct)


def cell_metrics(verdicts: Sequence[VerdictRecord], claim_ids: Optional[Iterable[str]] = None) -> CellMetrics:
    """
    Point estimates for one cell.

    claim_ids lists every claim run in the cell, including runs whose output
    had no reference list; they count toward N and the average citation count.

    Raises:
        EmptyCellError: no citations
    """
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyCellError("cell has no citations")

    n = len(verdicts)
    counts = {label: 0 for label in LABELS}
    flagged = 0
    for v in verdicts:
        counts[v.label] += 1
        flagged += int(v.temporal_violation)
    n_claims = len({v.claim_id for v in verdicts} | set(claim_ids or ()))

    return CellMetrics(
        model_id=_cell_label(v.model_id for v in verdicts),
        condition=_cell_label(v.condition for v in verdicts),
        n_claims=n_claims,
        n_citations=n,
        existing_rate=counts[Label.EXISTING] / n,
        fabricated_rate=counts[Label.FABRICATED] / n,
        unresolved_rate=counts[Label.UNRESOLVED] / n,
        temporal_violation_rate=flagged / n,
        avg_citations=n / n_claims,
    )


def per_claim_fraction(verdicts: Sequence[VerdictRecord]) -> ClaimFraction:
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyCellError("claim has no citations")
    claim_ids = {v.claim_id for v in verdicts}
    if len(claim_ids) != 1:
        raise ValueError(f"per_claim_fraction expects one claim, got {sorted(claim_ids)}")

    n_existing = sum(1 for v in verdicts if v.label == Label.EXISTING)
    return ClaimFraction(
        claim_id=verdicts[0].claim_id,
        f=n_existing / len(verdicts),
        n_existing=n_existing,
        n_citations=len(verdicts),
    )


def per_claim_fractions(verdicts: Sequence[VerdictRecord]) -> List[ClaimFraction]:
    by_claim = {}
    for v in verdicts:
        by_claim.setdefault(v.claim_id, []).append(v)
    return [per_claim_fraction(by_claim[claim_id]) for claim_id in sorted(by_claim)]


def strict_claim_rate(verdicts: Sequence[VerdictRecord]) -> float:
    """Share of claims whose every citation is Existing."""
    fractions = per_claim_fractions(verdicts)
    if not fractions:
        raise EmptyCellError("no claims")
    return sum(1 for fr in fractions if fr.n_existing == fr.n_citations) / len(fractions)


def summarize_fractions(fractions: Iterable) -> FractionSummary:
    """
    Box-plot summary of per-claim fractions: linear-interpolated quartiles,
    whiskers at the most extreme data points within 1.5 x IQR of the box.
    """
    values = np.array([fr.f if isinstance(fr, ClaimFraction) else float(fr) for fr in fractions], dtype=float)
    if values.size == 0:
        raise EmptyCellError("no claim fractions")

    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    inside = values[(values >= low_fence) & (values <= high_fence)]

    return FractionSummary(
        n_claims=int(values.size),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        n_outliers=int(values.size - inside.size),
        strict_rate=float(np.mean(values == 1.0)),
    )


# --- Cluster bootstrap ---

def _run_resamples(stat_fn: Callable, n_resamples: int, seed: int, workers: int = 1) -> np.ndarray:
    """
    Evaluate stat_fn(rng) once per resample, each with its own substream.

    Returns an array of shape (n_resamples, ...) in resample order.
    """
    if n_resamples < 1:
        raise ValueError(f"n_resamples must be >= 1 (got {n_resamples})")
    children = np.random.SeedSequence(seed).spawn(n_resamples)

    def run(chunk):
        return [(i, stat_fn(np.random.default_rng(children[i]))) for i in chunk]

    results = [None] * n_resamples
    if workers <= 1:
        parts = [run(range(n_resamples))]
    else:
        chunks = [c.tolist() for c in np.array_split(np.arange(n_resamples), workers) if c.size]
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run, chunks))

    for part in parts:
        for i, value in part:
            results[i] = value
    return np.array(results, dtype=float)


def _percentile_ci(samples) -> Tuple[float, float]:
    low, high = np.nanpercentile(samples, [2.5, 97.5])
    return float(low), float(high)


def _check_statistic(statistic):
    if isinstance(statistic, Label):
        statistic = statistic.value.lower()
    if statistic not in STATISTICS:
        raise ValueError(f"Unknown statistic {statistic!r}; expected one of {', '.join(STATISTICS)}")
    return statistic


def cluster_bootstrap_ci(verdicts: Sequence[VerdictRecord], statistic="existing", n_resamples=1000,
                         seed=0, workers=1, claim_ids=None) -> Tuple[float, float]:
    """
    95% percentile CI of a citation-weighted rate, resampling claims.

    Args:
        verdicts: citations of one cell (any order)
        statistic: existing | unresolved | fabricated | temporal_violation | doi_present
        n_resamples: bootstrap resamples B
        seed: root seed of the per-resample substreams
        workers: threads evaluating resamples (results do not depend on it)
        claim_ids: every claim run in the cell; zero-citation claims are resampled as empty clusters

    Raises:
        InsufficientClustersError: fewer than two claims
    """
    statistic = _check_statistic(statistic)
    tallies = _claim_tallies(verdicts, claim_ids)
    if len(tallies) < 2:
        raise InsufficientClustersError(f"cluster bootstrap needs at least 2 claims (got {len(tallies)})")

    numerator = tallies[statistic].to_numpy()
    denominator = tallies["n"].to_numpy()
    n_clusters = len(tallies)

    def stat(rng):
        idx = rng.integers(0, n_clusters, size=n_clusters)
        return _ratio(numerator[idx].sum(), denominator[idx].sum())

    return _percentile_ci(_run_resamples(stat, n_resamples, seed, workers))


def _contain(ci, point):
    # interval always brackets the point estimate
    return min(ci[0], point), max(ci[1], point)


def cell_metrics_with_ci(verdicts: Sequence[VerdictRecord], n_resamples=1000, seed=0, workers=1,
                         claim_ids=None) -> CellMetrics:
    """cell_metrics plus cluster-bootstrap CIs for the three label rates."""
    verdicts = list(verdicts)
    point = cell_metrics(verdicts, claim_ids)

    tallies = _claim_tallies(verdicts, claim_ids)
    if len(tallies) < 2:
        raise InsufficientClustersError(f"cluster bootstrap needs at least 2 claims (got {len(tallies)})")

    counts = tallies[["existing", "fabricated", "unresolved"]].to_numpy()
    denominator = tallies["n"].to_numpy()
    n_clusters = len(tallies)

    def stat(rng):
        idx = rng.integers(0, n_clusters, size=n_clusters)
        total = denominator[idx].sum()
        return counts[idx].sum(axis=0) / total if total else np.full(3, np.nan)

    samples = _run_resamples(stat, n_resamples, seed, workers)
    cis = [_percentile_ci(samples[:, j]) for j in range(3)]

    return point.model_copy(update={
        "existing_ci": _contain(cis[0], point.existing_rate),
        "fabricated_ci": _contain(cis[1], point.fabricated_rate),
        "unresolved_ci": _contain(cis[2], point.unresolved_rate),
    })


def _existing_rate(verdicts):
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyCellError("group has no citations")
    return sum(1 for v in verdicts if v.label == Label.EXISTING) / len(verdicts)


def rate_difference_ci(group_a: Sequence[VerdictRecord], group_b: Sequence[VerdictRecord], n_resamples=1000,
                       seed=0, paired=True, workers=1, label="", claims_a=None, claims_b=None) -> RateDifference:
    """
    Difference in existence rate, A minus B, with a cluster-bootstrap CI.

    Paired mode resamples one set of claim ids and applies it to both groups
    (the groups must cover the same claims); otherwise the two groups are
    resampled independently. claims_a / claims_b list every claim run in each
    group, so a claim whose output had no references still takes part.
    """
    group_a, group_b = list(group_a), list(group_b)
    delta = _existing_rate(group_a) - _existing_rate(group_b)

    tallies_a = _claim_tallies(group_a, claims_a)
    tallies_b = _claim_tallies(group_b, claims_b)
    for name, tallies in (("A", tallies_a), ("B", tallies_b)):
        if len(tallies) < 2:
            raise InsufficientClustersError(f"group {name} has {len(tallies)} claims, need at least 2")

    num_a, den_a = tallies_a["existing"].to_numpy(), tallies_a["n"].to_numpy()
    num_b, den_b = tallies_b["existing"].to_numpy(), tallies_b["n"].to_numpy()

    if paired:
        if list(tallies_a.index) != list(tallies_b.index):
            missing = sorted(set(tallies_a.index) ^ set(tallies_b.index))
            raise ClaimSetMismatchError(f"paired contrast needs the same claims in both groups; differing: {missing[:10]}")
        n_clusters = len(tallies_a)

        def stat(rng):
            idx = rng.integers(0, n_clusters, size=n_clusters)
            return _ratio(num_a[idx].sum(), den_a[idx].sum()) - _ratio(num_b[idx].sum(), den_b[idx].sum())
    else:
        n_a, n_b = len(tallies_a), len(tallies_b)

        def stat(rng):
            idx_a = rng.integers(0, n_a, size=n_a)
            idx_b = rng.integers(0, n_b, size=n_b)
            return _ratio(num_a[idx_a].sum(), den_a[idx_a].sum()) - _ratio(num_b[idx_b].sum(), den_b[idx_b].sum())

    low, high = _percentile_ci(_run_resamples(stat, n_resamples, seed, workers))
    return RateDifference(
        label=label,
        delta=delta,
        ci_low=low,
        ci_high=high,
        excludes_zero=not low <= 0.0 <= high,
        n_claims=len(tallies_a),
    )


# --- Grouping and contrasts ---

def group_rates(verdicts: Sequence[VerdictRecord], key: str) -> List[GroupRate]:
    """Citation-weighted existence rate per domain, model or condition."""
    if key not in GROUP_KEYS:
        raise UnknownGroupKeyError(f"Unknown group key {key!r}; expected one of {', '.join(GROUP_KEYS)}")
    attribute = GROUP_KEYS[key]

    groups = {}
    for v in verdicts:
        groups.setdefault(getattr(v, attribute), []).append(v)

    return [
        GroupRate(
            group=group,
            n_claims=len({v.claim_id for v in members}),
            n_citations=len(members),
            existing_rate=_existing_rate(members),
        )
        for group, members in sorted(groups.items())
    ]


def doi_completeness_rate(verdicts: Sequence[VerdictRecord]) -> float:
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyCellError("no citations")
    return sum(1 for v in verdicts if v.doi_present) / len(verdicts)


def doi_completeness_delta(group_a: Sequence[VerdictRecord], group_b: Sequence[VerdictRecord]) -> float:
    return doi_completeness_rate(group_a) - doi_completeness_rate(group_b)


def pool_models(verdicts: Sequence[VerdictRecord], models: Sequence[str]) -> List[VerdictRecord]:
    """Citations of the given models, pooled into one group."""
    models = set(models)
    return [v for v in verdicts if v.model_id in models]


def select(verdicts: Sequence[VerdictRecord], selector: CellSelector) -> List[VerdictRecord]:
    return [v for v in verdicts if selector.matches(v)]


def select_claims(runs: Sequence[RunCount], selector: CellSelector) -> List[str]:
    """Claims run under the selector, whether or not their outputs cited anything."""
    return sorted({r.claim_id for r in runs if selector.matches(r)})


def condition_order(conditions: Iterable[str]) -> List[str]:
    """Canonical condition order first, unknown names after in first-seen order."""
    seen = list(dict.fromkeys(conditions))
    canonical = [c.name.value for c in standard_conditions()]
    return [c for c in canonical if c in seen] + [c for c in seen if c not in canonical]


def standard_contrasts(models: Sequence[str], groups: Optional[Dict[str, Sequence[str]]] = None,
                       conditions: Optional[Sequence[str]] = None) -> List[Contrast]:
    """
    Per model: every non-Baseline condition minus Baseline.
    With two model groups (e.g. proprietary / open-weight): first group minus
    second group under each condition.
    """
    conditions = list(conditions) if conditions else [c.name.value for c in standard_conditions()]
    contrasts = []

    for model in models:
        for condition in conditions:
            if condition == BASELINE:
                continue
            contrasts.append(Contrast(
                label=f"{model}: {condition} - {BASELINE}",
                a=CellSelector(models=[model], conditions=[condition]),
                b=CellSelector(models=[model], conditions=[BASELINE]),
            ))

    if groups:
        if len(groups) != 2:
            raise ValueError(f"group contrasts need exactly two model groups (got {len(groups)})")
        (name_a, models_a), (name_b, models_b) = groups.items()
        for condition in conditions:
            contrasts.append(Contrast(
                label=f"{name_a} - {name_b}: {condition}",
                a=CellSelector(models=list(models_a), conditions=[condition]),
                b=CellSelector(models=list(models_b), conditions=[condition]),
            ))

    return contrasts


def evaluate_contrast(verdicts: Sequence[VerdictRecord], contrast: Contrast, n_resamples=1000, seed=0,
                      workers=1, runs: Optional[Sequence[RunCount]] = None) -> RateDifference:
    return rate_difference_ci(
        select(verdicts, contrast.a),
        select(verdicts, contrast.b),
        claims_a=select_claims(runs, contrast.a) if runs is not None else None,
        claims_b=select_claims(runs, contrast.b) if runs is not None else None,
        n_resamples=n_resamples,
        seed=seed,
        paired=contrast.paired,
        workers=workers,
        label=contrast.label,
    )


# --- Validation against human audit ---

def cohens_kappa(m: ConfusionMatrix3) -> Tuple[float, float]:
    """
    Observed agreement and Cohen's kappa.

    Raises:
        KappaUndefinedError: chance agreement is 1 but observed agreement is not
    """
    counts = m.as_array()
    total = counts.sum()
    p_o = np.trace(counts) / total
    p_e = float((counts.sum(axis=1) * counts.sum(axis=0)).sum()) / float(total * total)

    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0, 1.0
        raise KappaUndefinedError("chance agreement is 1; kappa is undefined")
    return float(p_o), float((p_o - p_e) / (1.0 - p_e))


def label_precision(m: ConfusionMatrix3) -> Dict[str, Optional[float]]:
    """Per pipeline label: share of its citations the auditors agreed with."""
    counts = m.as_array()
    precision = {}
    for i, label in enumerate(LABELS):
        row_total = counts[i].sum()
        precision[label.value] = float(counts[i, i] / row_total) if row_total else None
    return precision


def audit_rates_from_confusion(m: ConfusionMatrix3) -> AuditRates:
    """What the human labels say about pipeline-Unresolved citations."""
    row = m.as_array()[LABELS.index(Label.UNRESOLVED)]
    total = row.sum()
    if total == 0:
        raise EmptyCellError("no audited Unresolved citations")
    existing, unresolved, fabricated = (row / total).tolist()
    return AuditRates(existing=existing, unresolved=unresolved, fabricated=fabricated)


def sensitivity_reassign(cm: CellMetrics, audit: AuditRates) -> CellMetrics:
    """
    Move each cell's Unresolved mass to the three labels in the audited
    proportions. CIs are dropped.
    """
    u = cm.unresolved_rate
    return cm.model_copy(update={
        "existing_rate": cm.existing_rate + u * audit.existing,
        "fabricated_rate": cm.fabricated_rate + u * audit.fabricated,
        "unresolved_rate": u * audit.unresolved,
        "existing_ci": None,
        "fabricated_ci": None,
        "unresolved_ci": None,
    })


def load_audit(path) -> List[AuditRow]:
    path = Path(path)
    if not path.exists():
        raise AuditFileError(f"Audit file not found: {path}")

    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = AuditRow.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise AuditFileError(f"{path}:{line_no}: malformed audit row: {e}") from e
            if row.key in seen:
                raise AuditFileError(f"{path}:{line_no}: duplicate audit key {row.key!r}")
            seen.add(row.key)
            rows.append(row)

    logger.info(f"Loaded {len(rows)} audit rows from {path}")
    return rows


def confusion_from_audit(rows: Sequence[AuditRow], verdicts: Optional[Sequence[VerdictRecord]] = None) -> ConfusionMatrix3:
    """
    Cross-tabulate pipeline vs human labels.

    When verdicts are given every audit key must resolve to one of them and
    the recorded pipeline label must match the verdict.
    """
    by_key = {v.key: v for v in verdicts} if verdicts is not None else None
    counts = [[0, 0, 0] for _ in LABELS]

    for row in rows:
        pipeline = row.pipeline_label
        if by_key is not None:
            verdict = by_key.get(row.key)
            if verdict is None:
                raise AuditFileError(f"Audit key {row.key!r} does not match any verdict")
            if verdict.label != pipeline:
                raise AuditFileError(f"Audit key {row.key!r}: pipeline label {pipeline.value} "
                                     f"disagrees with verdict {verdict.label.value}")
        counts[LABELS.index(pipeline)][LABELS.index(row.human_label)] += 1

    if not rows:
        raise AuditFileError("Audit file has no rows")
    return ConfusionMatrix3(counts=counts)


def stratified_audit_sample(verdicts: Sequence[VerdictRecord], n: int, seed: int) -> List[VerdictRecord]:
    """
    Label-stratified validation sample: n citations split as evenly as
    possible across the three labels (a short label stratum gives its
    leftover to the others). Deterministic for a seed.
    """
    verdicts = list(verdicts)
    if n > len(verdicts):
        raise ValueError(f"cannot sample {n} of {len(verdicts)} citations")

    pools = {label: sorted((v for v in verdicts if v.label == label), key=lambda v: v.key) for label in LABELS}
    quota = {label: 0 for label in LABELS}
    remaining = n
    active = [label for label in LABELS if pools[label]]

    while remaining > 0 and active:
        share, extra = divmod(remaining, len(active))
        for i, label in enumerate(active):
            take = min(share + (1 if i < extra else 0), len(pools[label]) - quota[label])
            quota[label] += take
            remaining -= take
        active = [label for label in active if quota[label] < len(pools[label])]

    rng = np.random.default_rng(seed)
    sample = []
    for label in LABELS:
        if quota[label]:
            chosen = sorted(rng.choice(len(pools[label]), size=quota[label], replace=False).tolist())
            sample.extend(pools[label][i] for i in chosen)

    logger.info("Audit sample: " + ", ".join(f"{label.value} {quota[label]}" for label in LABELS))
    return sample


# --- Cells ---

def split_cells(verdicts: Sequence[VerdictRecord]) -> Dict[Tuple[str, str], List[VerdictRecord]]:
    """Group verdicts by (model, condition): models in first-seen order, conditions canonical."""
    models = list(dict.fromkeys(v.model_id for v in verdicts))
    conditions = condition_order(v.condition for v in verdicts)
    cells = {(m, c): [] for m in models for c in conditions}
    for v in verdicts:
        cells[(v.model_id, v.condition)].append(v)
    return {key: members for key, members in cells.items() if members}


def cell_claim_ids(runs: Sequence[RunCount]) -> Dict[Tuple[str, str], List[str]]:
    """Every claim run per (model, condition), zero-citation runs included."""
    cells = {}
    for r in runs:
        cells.setdefault((r.model_id, r.condition), set()).add(r.claim_id)
    return {key: sorted(claim_ids) for key, claim_ids in cells.items()}
