"""
Tabular report builders (pandas) for the stats and plot-data stages.
"""

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .claimset import DOMAINS
from .labeler import VerdictRecord
from .stats import (
    CellMetrics,
    FractionSummary,
    GroupRate,
    RateDifference,
    doi_completeness_delta,
    doi_completeness_rate,
)

METRIC_COLUMNS = [
    "model", "condition", "N", "n_citations",
    "existing", "existing_ci_low", "existing_ci_high",
    "fabricated", "fabricated_ci_low", "fabricated_ci_high",
    "unresolved", "unresolved_ci_low", "unresolved_ci_high",
    "t_viol", "avg_cit",
]


def _ci(ci, end):
    return ci[end] if ci is not None else np.nan


def metrics_frame(cells: Sequence[CellMetrics]) -> pd.DataFrame:
    rows = []
    for cm in cells:
        rows.append({
            "model": cm.model_id,
            "condition": cm.condition,
            "N": cm.n_claims,
            "n_citations": cm.n_citations,
            "existing": cm.existing_rate,
            "existing_ci_low": _ci(cm.existing_ci, 0),
            "existing_ci_high": _ci(cm.existing_ci, 1),
            "fabricated": cm.fabricated_rate,
            "fabricated_ci_low": _ci(cm.fabricated_ci, 0),
            "fabricated_ci_high": _ci(cm.fabricated_ci, 1),
            "unresolved": cm.unresolved_rate,
            "unresolved_ci_low": _ci(cm.unresolved_ci, 0),
            "unresolved_ci_high": _ci(cm.unresolved_ci, 1),
            "t_viol": cm.temporal_violation_rate,
            "avg_cit": cm.avg_citations,
        })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def metrics_records(cells: Sequence[CellMetrics]) -> List[dict]:
    """JSON mirror of metrics.csv (None where a CI is unavailable)."""
    return [
        {key: None if isinstance(value, float) and math.isnan(value) else value for key, value in row.items()}
        for row in metrics_frame(cells).to_dict(orient="records")
    ]


def deltas_frame(differences: Sequence[RateDifference]) -> pd.DataFrame:
    return pd.DataFrame(
        [d.model_dump() for d in differences],
        columns=["label", "delta", "ci_low", "ci_high", "excludes_zero", "n_claims"],
    ).rename(columns={"label": "contrast"})


def fraction_summary_frame(summaries: Dict[Tuple[str, str], FractionSummary], boxplot=False) -> pd.DataFrame:
    columns = ["n_claims", "median", "q1", "q3", "strict_rate"]
    if boxplot:
        columns = ["n_claims", "q1", "median", "q3", "whisker_low", "whisker_high", "n_outliers"]
    rows = []
    for (model, condition), summary in summaries.items():
        data = summary.model_dump()
        rows.append({"model": model, "condition": condition, **{c: data[c] for c in columns}})
    return pd.DataFrame(rows, columns=["model", "condition", *columns])


def group_frame(rates: Sequence[GroupRate], group_name: str) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in rates], columns=["group", "n_claims", "n_citations", "existing_rate"])
    return frame.rename(columns={"group": group_name})


def domain_order(frame: pd.DataFrame, column="domain") -> pd.DataFrame:
    rank = {domain: i for i, domain in enumerate(DOMAINS)}
    order = frame[column].map(lambda d: rank.get(d, len(rank)))
    return frame.assign(_rank=order).sort_values(["_rank", column], kind="stable").drop(columns="_rank").reset_index(drop=True)


def doi_frame(cells: Dict[Tuple[str, str], Sequence[VerdictRecord]], baseline="Baseline") -> pd.DataFrame:
    """DOI completeness per cell and its difference from the same model's (or group's) Baseline."""
    rows = []
    for (model, condition), members in cells.items():
        base = cells.get((model, baseline))
        rows.append({
            "model": model,
            "condition": condition,
            "n_citations": len(members),
            "doi_completeness": doi_completeness_rate(members),
            "delta_vs_baseline": doi_completeness_delta(members, base) if base else np.nan,
        })
    return pd.DataFrame(rows, columns=["model", "condition", "n_citations", "doi_completeness", "delta_vs_baseline"])


def sensitivity_frame(original: Sequence[CellMetrics], adjusted: Sequence[CellMetrics]) -> pd.DataFrame:
    rows = []
    for before, after in zip(original, adjusted):
        rows.append({
            "model": before.model_id,
            "condition": before.condition,
            "existing": before.existing_rate,
            "fabricated": before.fabricated_rate,
            "unresolved": before.unresolved_rate,
            "adj_existing": after.existing_rate,
            "adj_fabricated": after.fabricated_rate,
            "adj_unresolved": after.unresolved_rate,
        })
    return pd.DataFrame(rows, columns=["model", "condition", "existing", "fabricated", "unresolved",
                                       "adj_existing", "adj_fabricated", "adj_unresolved"])


def stacked_proportions_frame(cells: Sequence[CellMetrics]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"model": cm.model_id, "condition": cm.condition, "existing": cm.existing_rate,
          "unresolved": cm.unresolved_rate, "fabricated": cm.fabricated_rate} for cm in cells],
        columns=["model", "condition", "existing", "unresolved", "fabricated"],
    )
