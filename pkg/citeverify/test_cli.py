"""
End-to-end tests of the command-line pipeline on the packaged fixture
"""

import json
import os

import pandas as pd
import pytest

from .cli import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, EXIT_USAGE, FIXTURE_DIR, main
from .report_writer import load_verdicts

CLAIMS = os.path.join(FIXTURE_DIR, "claims.jsonl")
OUTPUTS = os.path.join(FIXTURE_DIR, "outputs.jsonl")
AUDIT = os.path.join(FIXTURE_DIR, "audit.jsonl")
EXPECTED = os.path.join(FIXTURE_DIR, "expected_verdicts.jsonl")

ARTIFACTS = ("parsed.jsonl", "verdicts.jsonl", "retrieval_errors.json", "compliance.csv")


def run_verify(report_dir, *extra):
    return main([
        "verify", "--claims", CLAIMS, "--outputs", OUTPUTS, "--backend", "fixture",
        "--report-dir", str(report_dir), "--cache-dir", str(report_dir / "cache"), *extra,
    ])


def read_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


@pytest.fixture
def verified(tmp_path):
    report_dir = tmp_path / "run"
    assert run_verify(report_dir) == EXIT_OK
    return report_dir


def test_verify_matches_expected_labels(verified):
    expected = {row["key"]: row for row in read_jsonl(EXPECTED)}
    verdicts = load_verdicts(verified / "verdicts.jsonl")

    assert len(verdicts) == len(expected) == 60
    for v in verdicts:
        want = expected[v.key]
        got = (v.label.value, v.temporal_violation, v.doi_present)
        assert got == (want["label"], want["temporal_violation"], want["doi_present"]), f"{v.key} ({want['variant']})"


def test_verify_writes_artifacts(verified):
    assert json.loads((verified / "retrieval_errors.json").read_text(encoding="utf-8")) == []

    parsed = read_jsonl(verified / "parsed.jsonl")
    assert len(parsed) == 60
    assert sum(1 for row in parsed if not row["parse_ok"]) == 5

    compliance = pd.read_csv(verified / "compliance.csv")
    assert len(compliance) == 20
    survey = compliance[compliance["condition"] == "Survey"]
    assert set(survey["requested"]) == {8}
    assert set(survey["compliance"]) == {-5}

    verdicts = load_verdicts(verified / "verdicts.jsonl")
    assert {v.domain for v in verdicts} == {"SE & CS", "Medicine & Health"}
    assert all(not v.retrieval_failed for v in verdicts)


def test_verify_is_byte_identical_across_runs(verified, tmp_path):
    second = tmp_path / "again"
    assert run_verify(second, "--workers", "1") == EXIT_OK
    for name in ARTIFACTS:
        assert (verified / name).read_bytes() == (second / name).read_bytes(), name


def test_stats_outputs(verified):
    args = ["stats", "--report-dir", str(verified), "--seed", "0", "--bootstrap-n", "200",
            "--audit", AUDIT, "--proprietary", "model-a", "--open-weight", "model-b"]
    assert main(args) == EXIT_OK

    metrics = json.loads((verified / "metrics.json").read_text(encoding="utf-8"))
    assert len(metrics) == 10
    first = metrics[0]
    assert (first["model"], first["condition"]) == ("model-a", "Baseline")
    assert first["existing"] == pytest.approx(4 / 6)
    assert first["unresolved"] == pytest.approx(1 / 6)
    assert first["fabricated"] == pytest.approx(1 / 6)
    assert first["N"] == 2
    assert first["avg_cit"] == 3.0
    assert first["existing_ci_low"] <= first["existing"] <= first["existing_ci_high"]

    deltas = pd.read_csv(verified / "deltas.csv")
    assert "model-a: Survey - Baseline" in set(deltas["contrast"])
    assert "proprietary - open-weight: Baseline" in set(deltas["contrast"])
    assert len(deltas) == 2 * 4 + 5

    temporal = metrics[1]
    assert temporal["condition"] == "Temporal"
    assert temporal["t_viol"] == pytest.approx(1 / 6)

    sensitivity = pd.read_csv(verified / "sensitivity.csv")
    assert len(sensitivity) == 10
    assert (sensitivity["adj_existing"] >= sensitivity["existing"] - 1e-6).all()

    for name in ("metrics.csv", "claim_fractions.csv", "domain_rates.csv", "doi_completeness.csv"):
        assert (verified / name).exists(), name

    doi = pd.read_csv(verified / "doi_completeness.csv")
    baseline = doi[(doi["model"] == "model-a") & (doi["condition"] == "Baseline")].iloc[0]
    assert baseline["doi_completeness"] == pytest.approx(3 / 6)
    assert baseline["delta_vs_baseline"] == 0.0


def test_stats_is_deterministic(verified, tmp_path):
    outputs = []
    for name in ("one", "two"):
        report_dir = tmp_path / name
        assert main(["stats", "--verdicts", str(verified / "verdicts.jsonl"), "--report-dir", str(report_dir),
                     "--seed", "3", "--bootstrap-n", "100"]) == EXIT_OK
        outputs.append((report_dir / "metrics.csv").read_bytes() + (report_dir / "deltas.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_validate_reports_agreement(tmp_path):
    assert main(["validate", "--audit", AUDIT, "--report-dir", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "validation.json").read_text(encoding="utf-8"))
    assert report["n"] == 100
    assert report["confusion"] == [[31, 1, 0], [4, 15, 16], [2, 2, 29]]
    assert report["agreement"] == pytest.approx(0.75)
    assert report["kappa"] == pytest.approx(0.6269, abs=5e-4)
    assert report["precision"]["Existing"] == pytest.approx(31 / 32)
    assert report["unresolved_audit_rates"]["fabricated"] == pytest.approx(16 / 35)


def test_validate_against_verdicts_requires_matching_keys(verified):
    code = main(["validate", "--audit", AUDIT, "--verdicts", str(verified / "verdicts.jsonl"),
                 "--report-dir", str(verified)])
    assert code == EXIT_INPUT


def test_plot_data_outputs(verified):
    assert main(["plot-data", "--report-dir", str(verified)]) == EXIT_OK

    stacked = pd.read_csv(verified / "stacked_proportions.csv")
    assert len(stacked) == 10
    totals = stacked["existing"] + stacked["unresolved"] + stacked["fabricated"]
    assert totals.round(6).eq(1.0).all()

    boxplot = pd.read_csv(verified / "claim_fraction_boxplot.csv")
    assert {"q1", "median", "q3", "whisker_low", "whisker_high"} <= set(boxplot.columns)

    domains = pd.read_csv(verified / "domain_existence.csv")
    assert list(domains["model"].unique()) == ["model-a", "model-b", "all"]
    assert len(domains) == 6


def test_render_prompts(tmp_path):
    claims = tmp_path / "claims.jsonl"
    with open(CLAIMS, "r", encoding="utf-8") as f:
        text = f.read()
    claims.write_text(text + json.dumps({"claim_id": "C3", "domain": "Humanities", "text": "Did printing matter?"}) + "\n",
                      encoding="utf-8")

    report_dir = tmp_path / "out"
    assert main(["render-prompts", "--claims", str(claims), "--report-dir", str(report_dir),
                 "--models", "model-a,model-b"]) == EXIT_OK

    prompts = sorted(p.name for p in (report_dir / "prompts").glob("*.txt"))
    assert len(prompts) == 3 * 5 - 2
    assert "C1__Combo.txt" in prompts
    errors = json.loads((report_dir / "prompts" / "errors.json").read_text(encoding="utf-8"))
    assert [(e["claim_id"], e["condition"]) for e in errors] == [("C3", "Temporal"), ("C3", "Combo")]
    assert len(read_jsonl(report_dir / "runs.jsonl")) == 3 * 5 * 2


def test_missing_input_is_exit_2(tmp_path):
    assert main(["verify", "--claims", str(tmp_path / "none.jsonl"), "--outputs", OUTPUTS,
                 "--backend", "fixture", "--report-dir", str(tmp_path)]) == EXIT_INPUT
    assert main(["stats", "--report-dir", str(tmp_path)]) == EXIT_INPUT


def test_unknown_claim_in_corpus_is_exit_2(tmp_path):
    outputs = tmp_path / "outputs.jsonl"
    outputs.write_text(json.dumps({"claim_id": "C9", "model_id": "m", "condition": "Baseline",
                                   "output_text": "x"}) + "\n", encoding="utf-8")
    assert main(["verify", "--claims", CLAIMS, "--outputs", str(outputs), "--backend", "fixture",
                 "--report-dir", str(tmp_path)]) == EXIT_INPUT


def test_usage_errors_are_exit_1(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["summarize"])
    assert info.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as info:
        main(["stats", "--bootstrap-n", "many"])
    assert info.value.code == EXIT_USAGE

    assert main(["stats", "--bootstrap-n", "0", "--report-dir", str(tmp_path)]) == EXIT_USAGE


def test_failure_budget_exceeded_is_exit_3(tmp_path):
    index = tmp_path / "index.json"
    index.write_text(json.dumps({
        "failures": {"s2_title": ["Alpha Study", "Beta Study"], "crossref_title": ["Alpha Study", "Beta Study"]},
    }), encoding="utf-8")
    outputs = tmp_path / "outputs.jsonl"
    outputs.write_text(json.dumps({
        "claim_id": "C1", "model_id": "m", "condition": "Baseline",
        "output_text": "Prose.\n\nReferences\n1. Title: Alpha Study | Year: 2021\n2. Title: Beta Study | Year: 2022\n",
    }) + "\n", encoding="utf-8")

    report_dir = tmp_path / "out"
    code = main(["verify", "--claims", CLAIMS, "--outputs", str(outputs), "--backend", "fixture",
                 "--fixture-index", str(index), "--report-dir", str(report_dir)])
    assert code == EXIT_BUDGET

    errors = json.loads((report_dir / "retrieval_errors.json").read_text(encoding="utf-8"))
    assert [e["key"] for e in errors] == ["C1|m|Baseline|0", "C1|m|Baseline|1"]
    assert not (report_dir / "verdicts.jsonl").exists()

    relaxed = tmp_path / "relaxed"
    assert main(["verify", "--claims", CLAIMS, "--outputs", str(outputs), "--backend", "fixture",
                 "--fixture-index", str(index), "--report-dir", str(relaxed), "--failure-budget", "1.0"]) == EXIT_OK
    verdicts = load_verdicts(relaxed / "verdicts.jsonl")
    assert all(v.retrieval_failed and v.label.value == "Unresolved" for v in verdicts)


def test_stats_counts_runs_without_references(tmp_path):
    rows = read_jsonl(OUTPUTS)
    for row in rows:
        if (row["claim_id"], row["model_id"], row["condition"]) == ("C2", "model-b", "Temporal"):
            row["output_text"] = "Randomized evidence is mixed, and the effect in adults appears small."
    outputs = tmp_path / "outputs.jsonl"
    outputs.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")

    report_dir = tmp_path / "run"
    assert main(["verify", "--claims", CLAIMS, "--outputs", str(outputs), "--backend", "fixture",
                 "--report-dir", str(report_dir), "--cache-dir", str(tmp_path / "cache")]) == EXIT_OK
    compliance = pd.read_csv(report_dir / "compliance.csv")
    assert len(compliance) == 20
    assert (compliance["realized"] == 0).sum() == 1

    assert main(["stats", "--report-dir", str(report_dir), "--seed", "0", "--bootstrap-n", "200"]) == EXIT_OK
    metrics = json.loads((report_dir / "metrics.json").read_text(encoding="utf-8"))
    cell = next(m for m in metrics if (m["model"], m["condition"]) == ("model-b", "Temporal"))
    assert cell["N"] == 2
    assert cell["n_citations"] == 3
    assert cell["avg_cit"] == 1.5
    assert cell["existing_ci_low"] is not None
    assert cell["existing_ci_low"] <= cell["existing"] <= cell["existing_ci_high"]

    deltas = pd.read_csv(report_dir / "deltas.csv")
    row = deltas[deltas["contrast"] == "model-b: Temporal - Baseline"]
    assert len(row) == 1
    assert row.iloc[0]["n_claims"] == 2

    assert main(["plot-data", "--report-dir", str(report_dir)]) == EXIT_OK
    stacked = pd.read_csv(report_dir / "stacked_proportions.csv")
    assert len(stacked) == 10


def test_stats_writes_full_precision_rates(verified):
    assert main(["stats", "--report-dir", str(verified), "--seed", "0", "--bootstrap-n", "100"]) == EXIT_OK
    metrics = pd.read_csv(verified / "metrics.csv")
    totals = metrics["existing"] + metrics["unresolved"] + metrics["fabricated"]
    assert ((totals - 1.0).abs() <= 1e-9).all()
    first = metrics.iloc[0]
    assert first["unresolved"] == pytest.approx(1 / 6, abs=1e-12)

    assert main(["plot-data", "--report-dir", str(verified)]) == EXIT_OK
    stacked = pd.read_csv(verified / "stacked_proportions.csv")
    totals = stacked["existing"] + stacked["unresolved"] + stacked["fabricated"]
    assert ((totals - 1.0).abs() <= 1e-9).all()


def test_stats_pools_model_groups_for_doi_completeness(verified):
    assert main(["stats", "--report-dir", str(verified), "--seed", "0", "--bootstrap-n", "100",
                 "--proprietary", "model-a", "--open-weight", "model-b"]) == EXIT_OK
    doi = pd.read_csv(verified / "doi_completeness.csv")
    assert {"proprietary", "open-weight"} <= set(doi["model"])

    single = doi[(doi["model"] == "model-a")].set_index("condition")
    pooled = doi[(doi["model"] == "proprietary")].set_index("condition")
    assert list(pooled.index) == list(single.index)
    assert pooled["doi_completeness"].tolist() == pytest.approx(single["doi_completeness"].tolist())
    assert pooled.loc["Baseline", "delta_vs_baseline"] == 0.0
    assert pooled.loc["Survey", "delta_vs_baseline"] == pytest.approx(
        single.loc["Survey", "doi_completeness"] - single.loc["Baseline", "doi_completeness"])


def test_validate_writes_stratified_audit_sample(verified):
    assert main(["validate", "--audit-sample", "12", "--report-dir", str(verified), "--seed", "5"]) == EXIT_OK
    sample = read_jsonl(verified / "audit_sample.jsonl")
    assert len(sample) == 12
    assert all(row["human_label"] is None for row in sample)
    assert len({row["key"] for row in sample}) == 12
    labels = {row["pipeline_label"] for row in sample}
    assert labels <= {"Existing", "Unresolved", "Fabricated"}
    assert not (verified / "validation.json").exists()

    assert main(["validate", "--audit-sample", "500", "--report-dir", str(verified)]) == EXIT_INPUT


def write_claim_pool(path, per_domain, domains):
    rows = [
        {"claim_id": f"D{d}-{i:02d}", "domain": domain, "text": f"Does intervention {i} work?", "window": [2019, 2024]}
        for d, domain in enumerate(domains)
        for i in range(per_domain)
    ]
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")
    return path


SIX_DOMAINS = ["SE & CS", "Natural Sciences", "Medicine & Health", "Social Sciences", "Humanities", "Interdisciplinary"]


def test_render_prompts_full_claim_set(tmp_path):
    claims = write_claim_pool(tmp_path / "claims.jsonl", 24, SIX_DOMAINS)
    report_dir = tmp_path / "out"
    assert main(["render-prompts", "--claims", str(claims), "--report-dir", str(report_dir),
                 "--models", "claude,gpt,llama,qwen"]) == EXIT_OK

    assert len(list((report_dir / "prompts").glob("*.txt"))) == 720
    assert json.loads((report_dir / "prompts" / "errors.json").read_text(encoding="utf-8")) == []
    assert len(read_jsonl(report_dir / "runs.jsonl")) == 2880


def test_render_prompts_samples_claims_per_domain(tmp_path):
    claims = write_claim_pool(tmp_path / "pool.jsonl", 10, SIX_DOMAINS)
    report_dir = tmp_path / "out"
    assert main(["render-prompts", "--claims", str(claims), "--report-dir", str(report_dir),
                 "--per-domain", "4", "--seed", "7"]) == EXIT_OK

    sample = read_jsonl(report_dir / "claims_sample.jsonl")
    assert len(sample) == 24
    assert {row["domain"] for row in sample} == set(SIX_DOMAINS)
    assert len(list((report_dir / "prompts").glob("*.txt"))) == 24 * 5

    again = tmp_path / "again"
    assert main(["render-prompts", "--claims", str(claims), "--report-dir", str(again),
                 "--per-domain", "4", "--seed", "7"]) == EXIT_OK
    assert (again / "claims_sample.jsonl").read_bytes() == (report_dir / "claims_sample.jsonl").read_bytes()

    assert main(["render-prompts", "--claims", str(claims), "--report-dir", str(tmp_path / "short"),
                 "--per-domain", "11"]) == EXIT_INPUT
