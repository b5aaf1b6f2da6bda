"""
Command-line pipeline: render-prompts -> (models run elsewhere) -> verify ->
stats / validate / plot-data. Stages talk through files in the report
directory.

Exit codes: 0 ok, 1 usage, 2 input error, 3 retrieval failure budget exceeded.
"""

import argparse
import logging
import os
import re
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from .claimset import (
    TEMPLATE_DIR,
    condition_by_name,
    expand_runs,
    load_claims,
    load_templates,
    render_prompt,
    standard_conditions,
    stratified_sample_claims,
)
from .config import Config, configure_logging
from .errors import (
    CiteVerifyError,
    ClaimSetMismatchError,
    CorpusFileError,
    EmptyCellError,
    FailureBudgetExceeded,
    InputError,
    InsufficientClustersError,
    KappaUndefinedError,
    MissingWindowError,
    RetrievalError,
)
from .indexclient import RetrievalConfig, build_backend, retrieve_many
from .labeler import LABELS, LabelerConfig, VerdictRecord, citation_key, label_citation, unresolved_verdict
from .refparse import count_compliance, load_model_outputs, parse_output
from .report_writer import ReportWriter, load_run_counts, load_verdicts
from .stats import (
    audit_rates_from_confusion,
    cell_claim_ids,
    cell_metrics,
    cell_metrics_with_ci,
    cohens_kappa,
    confusion_from_audit,
    evaluate_contrast,
    group_rates,
    label_precision,
    load_audit,
    per_claim_fractions,
    pool_models,
    select,
    sensitivity_reassign,
    split_cells,
    standard_contrasts,
    stratified_audit_sample,
    summarize_fractions,
)
from . import tables

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_BUDGET = 3

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")
DEFAULT_FIXTURE_INDEX = os.path.join(FIXTURE_DIR, "index.json")


class PipelineConfig(BaseModel):
    claims: Optional[str] = None
    outputs: Optional[str] = None
    verdicts: Optional[str] = None
    audit: Optional[str] = None
    templates: str = TEMPLATE_DIR
    report_dir: str = "reports"
    backend: str = Field("live", pattern="^(live|fixture)$")
    fixture_index: str = DEFAULT_FIXTURE_INDEX
    models: List[str] = Field(default_factory=list)
    proprietary: List[str] = Field(default_factory=list)
    open_weight: List[str] = Field(default_factory=list)
    per_domain: Optional[int] = Field(None, ge=1)
    audit_sample: Optional[int] = Field(None, ge=1)
    seed: int = 0
    bootstrap_n: int = Field(1000, ge=1)
    failure_budget: float = Field(0.10, ge=0.0, le=1.0)
    workers: int = Field(1, ge=1)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    labeler: LabelerConfig = Field(default_factory=LabelerConfig)

    def verdicts_path(self) -> str:
        return self.verdicts or os.path.join(self.report_dir, "verdicts.jsonl")

    def runs_path(self) -> str:
        return os.path.join(os.path.dirname(self.verdicts_path()), "compliance.csv")


def _require(path, what):
    if not path:
        raise InputError(f"No {what} given")
    if not Path(path).exists():
        raise InputError(f"{what.capitalize()} not found: {path}")
    return path


def _safe_name(text):
    return re.sub(r"[^\w.-]", "_", text)


# --- Subcommands ---

def cmd_render_prompts(cfg: PipelineConfig) -> int:
    claims = load_claims(_require(cfg.claims, "claims file"))
    if cfg.per_domain:
        claims = stratified_sample_claims(list(claims), cfg.per_domain, cfg.seed)
        ReportWriter(cfg.report_dir).write_jsonl("claims_sample.jsonl", claims)
    templates = load_templates(cfg.templates)
    conditions = standard_conditions()
    writer = ReportWriter(cfg.report_dir)

    written = 0
    errors = []
    for claim in claims:
        for condition in conditions:
            try:
                prompt = render_prompt(claim, condition, templates)
            except MissingWindowError as e:
                logger.warning(str(e))
                errors.append({"claim_id": claim.claim_id, "condition": condition.name.value, "error": str(e)})
                continue
            writer.write_text(f"prompts/{_safe_name(claim.claim_id)}__{condition.name.value}.txt", prompt)
            written += 1

    writer.write_json("prompts/errors.json", errors)
    if cfg.models:
        runs = expand_runs(claims, conditions, cfg.models)
        writer.write_jsonl("runs.jsonl", runs)
        logger.info(f"Run grid: {len(runs)} runs ({len(claims)} claims x {len(conditions)} conditions x {len(cfg.models)} models)")

    logger.info(f"Rendered {written} prompts, {len(errors)} missing-window errors")
    return written


def cmd_verify(cfg: PipelineConfig) -> List[VerdictRecord]:
    """
    Parse -> retrieve -> score -> label for every output in the corpus.

    Raises:
        FailureBudgetExceeded: more than cfg.failure_budget of the citations
            hit hard retrieval errors (retrieval_errors.json is still written)
    """
    claims = load_claims(_require(cfg.claims, "claims file"))
    outputs = load_model_outputs(_require(cfg.outputs, "model output corpus"))
    writer = ReportWriter(cfg.report_dir)

    runs = []
    for output in outputs:
        claim = claims.get(output.claim_id)
        if claim is None:
            raise CorpusFileError(f"Output {output.model_id}/{output.condition} references unknown claim {output.claim_id!r}")
        condition = condition_by_name(output.condition)
        window = claim.window if condition.uses_window else None
        runs.append((output, claim, condition, window, parse_output(output)))

    logger.info(f"Parsed {sum(len(r[4]) for r in runs)} citations from {len(runs)} outputs")

    backend = build_backend(cfg.backend, cfg.retrieval, cfg.fixture_index)
    to_retrieve = [
        (citation_key(output.claim_id, output.model_id, output.condition, parsed.citation_index), parsed)
        for output, _, _, _, citations in runs
        for parsed in citations
        if parsed.parse_ok
    ]
    retrieved = retrieve_many(to_retrieve, cfg.retrieval, backend)

    parsed_rows, verdicts, failures, compliance = [], [], [], []
    for i, (output, claim, condition, window, citations) in enumerate(runs, start=1):
        for parsed in citations:
            key = citation_key(output.claim_id, output.model_id, output.condition, parsed.citation_index)
            result = retrieved.get(key)
            if isinstance(result, RetrievalError):
                failures.append({"key": key, "service": result.service, "query": result.query, "error": str(result)})
                verdict = unresolved_verdict(parsed, window)
            else:
                verdict = label_citation(parsed, result.candidates if result is not None else [], cfg.labeler, window)

            verdicts.append(VerdictRecord.from_verdict(verdict, output.claim_id, output.model_id,
                                                       output.condition, claim.domain))
            parsed_rows.append({
                "claim_id": output.claim_id,
                "model_id": output.model_id,
                "condition": output.condition,
                **parsed.model_dump(mode="json"),
            })

        compliance.append({
            "claim_id": output.claim_id,
            "model": output.model_id,
            "condition": output.condition,
            "requested": condition.requested_citations,
            "realized": len(citations),
            "compliance": count_compliance(citations, condition.requested_citations),
        })
        if i % 50 == 0 or i == len(runs):
            logger.info(f"Labeled {i}/{len(runs)} outputs")

    request_count = getattr(backend, "request_count", 0)
    logger.info(f"Verified {len(verdicts)} citations: {len(failures)} retrieval failures, {request_count} index requests")

    writer.write_json("retrieval_errors.json", failures)
    if verdicts and len(failures) > cfg.failure_budget * len(verdicts):
        raise FailureBudgetExceeded(len(failures), len(verdicts), cfg.failure_budget)

    writer.write_jsonl("parsed.jsonl", parsed_rows)
    writer.write_jsonl("verdicts.jsonl", verdicts)
    writer.write_csv("compliance.csv", pd.DataFrame(
        compliance, columns=["claim_id", "model", "condition", "requested", "realized", "compliance"]))
    return verdicts


def _load_runs(cfg, cells):
    """
    Per-run citation counts from verify, when they sit beside the verdicts.
    Without them only runs that produced at least one citation are known.
    """
    path = cfg.runs_path()
    if not Path(path).exists():
        logger.warning(f"No run counts at {path}; runs without references are not counted")
        return None
    runs = load_run_counts(path)
    for model, condition in cell_claim_ids(runs):
        if (model, condition) not in cells:
            logger.warning(f"{model}/{condition}: no citations in any output, cell left out")
    return runs


def _cells_with_ci(cfg, cells, claim_ids):
    metrics = []
    for (model, condition), members in cells.items():
        ids = claim_ids.get((model, condition))
        try:
            metrics.append(cell_metrics_with_ci(members, n_resamples=cfg.bootstrap_n, seed=cfg.seed,
                                                workers=cfg.workers, claim_ids=ids))
        except InsufficientClustersError as e:
            logger.warning(f"{model}/{condition}: no CI ({e})")
            metrics.append(cell_metrics(members, ids))
    return metrics


def _doi_rates(cells, groups, verdicts):
    """DOI completeness per cell, plus pooled rows per model group when groups are given."""
    rates = dict(cells)
    if groups:
        for condition in dict.fromkeys(condition for _, condition in cells):
            for name, models in groups.items():
                pooled = [v for v in pool_models(verdicts, models) if v.condition == condition]
                if pooled:
                    rates[(name, condition)] = pooled
    return rates


def _sensitivity_rates(cfg):
    matrix = confusion_from_audit(load_audit(cfg.audit))
    return audit_rates_from_confusion(matrix)


def cmd_stats(cfg: PipelineConfig):
    verdicts = load_verdicts(cfg.verdicts_path())
    if not verdicts:
        raise InputError(f"No verdicts in {cfg.verdicts_path()}")
    writer = ReportWriter(cfg.report_dir)
    cells = split_cells(verdicts)
    runs = _load_runs(cfg, cells)
    claim_ids = cell_claim_ids(runs) if runs is not None else {}

    metrics = _cells_with_ci(cfg, cells, claim_ids)
    writer.write_csv("metrics.csv", tables.metrics_frame(metrics))
    writer.write_json("metrics.json", tables.metrics_records(metrics))

    models = list(dict.fromkeys(v.model_id for v in verdicts))
    groups = None
    if cfg.proprietary and cfg.open_weight:
        groups = {"proprietary": cfg.proprietary, "open-weight": cfg.open_weight}
    conditions = list(dict.fromkeys(condition for _, condition in cells))

    differences = []
    for contrast in standard_contrasts(models, groups, conditions):
        if not select(verdicts, contrast.a) or not select(verdicts, contrast.b):
            continue
        try:
            differences.append(evaluate_contrast(verdicts, contrast, n_resamples=cfg.bootstrap_n,
                                                 seed=cfg.seed, workers=cfg.workers, runs=runs))
        except (InsufficientClustersError, ClaimSetMismatchError, EmptyCellError) as e:
            logger.warning(f"Skipping contrast {contrast.label!r}: {e}")
    writer.write_csv("deltas.csv", tables.deltas_frame(differences))

    summaries = {cell: summarize_fractions(per_claim_fractions(members)) for cell, members in cells.items()}
    writer.write_csv("claim_fractions.csv", tables.fraction_summary_frame(summaries))

    domain_rates = tables.group_frame(group_rates(verdicts, "domain"), "domain")
    writer.write_csv("domain_rates.csv", tables.domain_order(domain_rates))

    writer.write_csv("doi_completeness.csv", tables.doi_frame(_doi_rates(cells, groups, verdicts)))

    if cfg.audit:
        audit = _sensitivity_rates(cfg)
        adjusted = [sensitivity_reassign(cm, audit) for cm in metrics]
        writer.write_csv("sensitivity.csv", tables.sensitivity_frame(metrics, adjusted))

    logger.info(f"Stats: {len(metrics)} cells, {len(differences)} contrasts")
    return metrics


def _write_audit_sample(cfg):
    verdicts = load_verdicts(_require(cfg.verdicts_path(), "verdicts file"))
    try:
        sample = stratified_audit_sample(verdicts, cfg.audit_sample, cfg.seed)
    except ValueError as e:
        raise InputError(str(e)) from e
    rows = [
        {"key": v.key, "pipeline_label": v.label.value, "human_label": None, "domain": v.domain,
         "best_score": v.best_score.s if v.best_score is not None else None}
        for v in sample
    ]
    ReportWriter(cfg.report_dir).write_jsonl("audit_sample.jsonl", rows)
    logger.info(f"Wrote {len(rows)} citations to audit_sample.jsonl for human labeling")
    return rows


def cmd_validate(cfg: PipelineConfig) -> dict:
    """
    Agreement between pipeline and human labels. With --audit-sample N, first
    draws a label-stratified sample of N verdicts for auditors to label.
    """
    if cfg.audit_sample:
        sample = _write_audit_sample(cfg)
        if not cfg.audit:
            return {"audit_sample": len(sample)}

    rows = load_audit(_require(cfg.audit, "audit file"))
    verdicts = load_verdicts(cfg.verdicts) if cfg.verdicts else None
    matrix = confusion_from_audit(rows, verdicts)

    try:
        agreement, kappa = cohens_kappa(matrix)
    except KappaUndefinedError as e:
        logger.warning(str(e))
        agreement, kappa = float(sum(matrix.counts[i][i] for i in range(3)) / matrix.total), None

    try:
        audit_rates = audit_rates_from_confusion(matrix).model_dump()
    except EmptyCellError:
        audit_rates = None

    report = {
        "n": matrix.total,
        "labels": [label.value for label in LABELS],
        "confusion": matrix.counts,
        "agreement": agreement,
        "kappa": kappa,
        "precision": label_precision(matrix),
        "unresolved_audit_rates": audit_rates,
    }
    ReportWriter(cfg.report_dir).write_json("validation.json", report)
    logger.info(f"Validation: n={matrix.total}, agreement={agreement:.3f}, kappa={kappa}")
    return report


def cmd_plotdata(cfg: PipelineConfig):
    verdicts = load_verdicts(cfg.verdicts_path())
    if not verdicts:
        raise InputError(f"No verdicts in {cfg.verdicts_path()}")
    writer = ReportWriter(cfg.report_dir)
    cells = split_cells(verdicts)
    runs = _load_runs(cfg, cells)
    claim_ids = cell_claim_ids(runs) if runs is not None else {}

    writer.write_csv("stacked_proportions.csv",
                     tables.stacked_proportions_frame([cell_metrics(members, claim_ids.get(cell)) for cell, members in cells.items()]))

    summaries = {cell: summarize_fractions(per_claim_fractions(members)) for cell, members in cells.items()}
    writer.write_csv("claim_fraction_boxplot.csv", tables.fraction_summary_frame(summaries, boxplot=True))

    frames = []
    for model in dict.fromkeys(v.model_id for v in verdicts):
        frame = tables.group_frame(group_rates([v for v in verdicts if v.model_id == model], "domain"), "domain")
        frames.append(frame.assign(model=model))
    frames.append(tables.group_frame(group_rates(verdicts, "domain"), "domain").assign(model="all"))
    domain_existence = pd.concat(frames, ignore_index=True)
    domain_existence = domain_existence[["model", "domain", "n_claims", "n_citations", "existing_rate"]]
    writer.write_csv("domain_existence.csv", domain_existence)


# --- Argument parsing ---

class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _list(value):
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--claims", help="Claims file (JSON Lines)")
    common.add_argument("--outputs", help="Model-output corpus (JSON Lines)")
    common.add_argument("--verdicts", help="Verdicts file (default: <report-dir>/verdicts.jsonl)")
    common.add_argument("--audit", help="Human audit labels (JSON Lines)")
    common.add_argument("--templates", default=TEMPLATE_DIR, help="Prompt template directory")
    common.add_argument("--report-dir", default="reports", help="Output directory (default: reports)")
    common.add_argument("--cache-dir", help=f"Response cache directory (default: $CITEVERIFY_CACHE or {Config.CACHE_DIR})")
    common.add_argument("--backend", choices=["live", "fixture"], default="live", help="Index backend (default: live)")
    common.add_argument("--fixture-index", default=DEFAULT_FIXTURE_INDEX, help="Fixture index file for --backend fixture")
    common.add_argument("--models", type=_list, default=[], help="Comma-separated model ids for the run grid")
    common.add_argument("--proprietary", type=_list, default=[], help="Comma-separated proprietary model ids")
    common.add_argument("--open-weight", type=_list, default=[], help="Comma-separated open-weight model ids")
    common.add_argument("--seed", type=int, default=0, help="Bootstrap / sampling seed (default: 0)")
    common.add_argument("--per-domain", type=int, help="render-prompts: sample this many claims per domain first")
    common.add_argument("--audit-sample", type=int, help="validate: write a label-stratified sample of N verdicts to audit")
    common.add_argument("--bootstrap-n", type=int, default=1000, help="Bootstrap resamples (default: 1000)")
    common.add_argument("--workers", type=int, default=4, help="Worker threads for retrieval and bootstrap (default: 4)")
    common.add_argument("--failure-budget", type=float, default=0.10,
                        help="Max share of citations allowed to fail retrieval (default: 0.10)")
    common.add_argument("--log-level", default=None, help="Logging level (default: $CITEVERIFY_LOG_LEVEL or INFO)")

    parser = CliParser(
        prog="citeverify",
        description="Verify generated citations against Crossref and Semantic Scholar",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Render the five condition prompts for every claim
  python -m citeverify render-prompts --claims claims.jsonl --models gpt,claude

  # Sample 24 claims per domain from a larger pool first
  python -m citeverify render-prompts --claims pool.jsonl --per-domain 24 --seed 1

  # Offline run against the packaged fixture
  python -m citeverify verify --claims citeverify/fixtures/claims.jsonl \\
      --outputs citeverify/fixtures/outputs.jsonl --backend fixture

  # Metrics, contrasts and sensitivity analysis
  python -m citeverify stats --audit audit.jsonl --proprietary claude,gpt --open-weight llama,qwen

  # Draw 100 verdicts for a human audit
  python -m citeverify validate --audit-sample 100

Environment: CROSSREF_MAILTO, S2_API_KEY, CITEVERIFY_CACHE, CITEVERIFY_LOG_FILE.
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler, help_text in [
        ("render-prompts", cmd_render_prompts, "Render one prompt per (claim, condition)"),
        ("verify", cmd_verify, "Parse, retrieve, score and label every citation"),
        ("stats", cmd_stats, "Cell metrics, contrasts, fractions, domain and DOI tables"),
        ("validate", cmd_validate, "Agreement and kappa against human audit labels"),
        ("plot-data", cmd_plotdata, "Data files for the stacked-proportion, box and domain plots"),
    ]:
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(handler=handler)

    return parser


def pipeline_config(args) -> PipelineConfig:
    retrieval = RetrievalConfig(
        cache_dir=args.cache_dir or Config.CACHE_DIR,
        workers=args.workers,
    )
    return PipelineConfig(
        claims=args.claims,
        outputs=args.outputs,
        verdicts=args.verdicts,
        audit=args.audit,
        templates=args.templates,
        report_dir=args.report_dir,
        backend=args.backend,
        fixture_index=args.fixture_index,
        models=args.models,
        proprietary=args.proprietary,
        open_weight=args.open_weight,
        seed=args.seed,
        per_domain=args.per_domain,
        audit_sample=args.audit_sample,
        bootstrap_n=args.bootstrap_n,
        failure_budget=args.failure_budget,
        workers=args.workers,
        retrieval=retrieval,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        cfg = pipeline_config(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    try:
        args.handler(cfg)
    except FailureBudgetExceeded as e:
        logger.error(f"{e}; see {os.path.join(cfg.report_dir, 'retrieval_errors.json')}")
        return EXIT_BUDGET
    except CiteVerifyError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_INPUT

    return EXIT_OK
