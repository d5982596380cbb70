import json
from fractions import Fraction
from pathlib import Path

import pytest

from wardround.icd10 import default_chapter_table, sample_code_table
from wardround.llm import ScriptedBackend
from wardround.metrics import Granularity
from wardround.orchestrator import (DialogueConfig, RunCase, TOOL_BASELINE, TOOL_DIALOGUE,
                                    extract_tool_call, render_tool_call)
from wardround.reporting import (CASE_LABELS, NoScoresFoundError, aggregate_rows,
                                 aggregate_run_dirs, histogram_to_csv, load_results,
                                 report_to_csv, report_to_json, write_report_files)
from wardround.runner import RunSpec, completed_record_ids, run_batch

from oracles import naive_metrics, naive_mean


def two_agent_factories(pred_codes_by_record):
    """Physician asks once then discharges with the given codes; assistant replies twice."""

    def physician(record_id):
        codes = pred_codes_by_record[record_id]
        return ScriptedBackend(
            ["Initial evaluation please.",
             render_tool_call(TOOL_DIALOGUE, "working diagnosis", codes)],
            model="mock-physician")

    def assistant(record_id):
        return ScriptedBackend(["Structured summary.", "Acknowledged."],
                               model="mock-assistant")

    return physician, assistant


@pytest.fixture
def run_spec(tmp_path, synthetic_records):
    records = synthetic_records[:6]
    preds = {r.record_id: ", ".join(c.raw for c in r.gold_codes[:2]) for r in records}
    physician, assistant = two_agent_factories(preds)
    return RunSpec(
        case=RunCase.TWO_AGENT,
        records=records,
        out_dir=tmp_path / "run1",
        physician_factory=physician,
        assistant_factory=assistant,
        physician_model="mock-physician",
        assistant_model="mock-assistant",
        chapter_table=default_chapter_table(),
        code_table=sample_code_table(),
    ), preds


def test_run_batch_writes_everything(run_spec):
    spec, preds = run_spec
    summary = run_batch(spec)
    assert summary.executed == 6
    assert summary.discharged == 6
    assert summary.failed == 0

    results = load_results(spec.out_dir)
    assert len(results) == 6
    for row in results:
        assert row["outcome"] == "discharged"
        assert row["turns"] == 4
        assert row["model"] == "mock-physician"
        transcript = Path(spec.out_dir) / "transcripts" / f"{row['record_id']}.jsonl"
        assert transcript.exists()

    manifest = json.loads((Path(spec.out_dir) / "manifest.json").read_text())
    assert manifest["case"] == "two_agent"
    assert manifest["finished"] is not None
    assert set(manifest["prompt_hashes"]) == {"baseline", "chief_physician", "physician_assistant"}
    assert manifest["version"]


def test_run_batch_resume_skips_completed(run_spec):
    spec, preds = run_spec
    run_batch(spec)
    # fresh factories: scripts must not be consumed on resume
    physician, assistant = two_agent_factories(preds)
    spec.physician_factory = physician
    spec.assistant_factory = assistant
    summary = run_batch(spec)
    assert summary.executed == 0
    assert summary.skipped == 6
    assert len(load_results(spec.out_dir)) == 6


def test_completed_ids_empty_for_fresh_dir(tmp_path):
    assert completed_record_ids(tmp_path / "nope") == set()


def test_run_batch_concurrent_matches_serial(run_spec, tmp_path, synthetic_records):
    spec, preds = run_spec
    run_batch(spec)
    serial = {r["record_id"]: r for r in load_results(spec.out_dir)}

    physician, assistant = two_agent_factories(preds)
    spec2 = RunSpec(
        case=RunCase.TWO_AGENT,
        records=synthetic_records[:6],
        out_dir=tmp_path / "run2",
        physician_factory=physician,
        assistant_factory=assistant,
        physician_model="mock-physician",
        assistant_model="mock-assistant",
        chapter_table=default_chapter_table(),
        code_table=sample_code_table(),
        concurrency=4,
    )
    run_batch(spec2)
    concurrent = {r["record_id"]: r for r in load_results(spec2.out_dir)}
    assert serial.keys() == concurrent.keys()
    for rid in serial:
        a, b = serial[rid], concurrent[rid]
        for block in ("category", "chapter"):
            assert a[block] == b[block]
        assert a["turns"] == b["turns"]


def test_failed_sessions_score_zero(tmp_path, synthetic_records):
    records = synthetic_records[:3]

    def physician(record_id):
        return ScriptedBackend(["no tool call here"] * 10, model="mock-physician")

    spec = RunSpec(
        case=RunCase.TWO_AGENT,
        records=records,
        out_dir=tmp_path / "failrun",
        physician_factory=physician,
        assistant_factory=lambda rid: ScriptedBackend(["reply"] * 10, model="mock-assistant"),
        physician_model="mock-physician",
        dialogue=DialogueConfig(max_turns=4),
    )
    summary = run_batch(spec)
    assert summary.failed == 3
    for row in load_results(spec.out_dir):
        assert row["outcome"] == "failed"
        assert row["failure_reason"] == "max_turns"
        assert row["category"]["precision"] == [0, 1]
        assert row["chapter"]["f1"] == [0, 1]
        assert row["discharge"] is None


def test_spec_validation(tmp_path, synthetic_records):
    with pytest.raises(ValueError):
        RunSpec(case=RunCase.TWO_AGENT, records=synthetic_records[:1],
                out_dir=tmp_path, physician_factory=lambda r: None)
    with pytest.raises(ValueError):
        RunSpec(case=RunCase.BASELINE_COMPLAINT, records=synthetic_records[:1],
                out_dir=tmp_path, physician_factory=lambda r: None,
                assistant_factory=lambda r: None)
    with pytest.raises(ValueError):
        RunSpec(case=RunCase.BASELINE_COMPLAINT, records=synthetic_records[:1],
                out_dir=tmp_path, physician_factory=lambda r: None, concurrency=0)


def test_transcript_replay_reproduces_discharge(run_spec):
    spec, preds = run_spec
    run_batch(spec)
    for row in load_results(spec.out_dir):
        transcript = Path(spec.out_dir) / "transcripts" / f"{row['record_id']}.jsonl"
        lines = [json.loads(l) for l in transcript.read_text().splitlines()]
        tool_lines = [l for l in lines if l.get("kind") == "turn" and l.get("is_tool_call")]
        assert len(tool_lines) == 1
        replayed = extract_tool_call(tool_lines[0]["content"], TOOL_DIALOGUE)
        outcome = [l for l in lines if l.get("kind") == "outcome"][0]
        assert replayed.to_dict() == outcome["discharge"]


# ---------------------------------------------------------------- reporting

def test_aggregate_means_match_oracle(run_spec, synthetic_records):
    spec, preds = run_spec
    run_batch(spec)
    rows = load_results(spec.out_dir)
    reports = aggregate_rows(rows)
    assert len(reports) == 1
    rep = reports[0]
    by_id = {r.record_id: r for r in synthetic_records}

    for granularity, block in (("category", rep.category), ("chapter", rep.chapter)):
        expected = naive_mean([
            naive_metrics([c.raw for c in by_id[rid].gold_codes],
                          [t.strip() for t in preds[rid].split(",")],
                          granularity)["precision"]
            for rid in preds])
        assert block.precision == expected

    assert rep.turns.mean == Fraction(4)
    assert rep.turns.histogram == {4: 6}
    assert rep.turns.failure_count == 0


def test_report_csv_shape(run_spec):
    spec, _ = run_spec
    run_batch(spec)
    reports = aggregate_rows(load_results(spec.out_dir))
    csv_text = report_to_csv(reports)
    lines = csv_text.strip().splitlines()
    header = lines[0].split(",")
    assert header == ["agent", "case",
                      "category_jaccard", "category_precision", "category_recall", "category_f1",
                      "chapter_jaccard", "chapter_precision", "chapter_recall", "chapter_f1"]
    row = lines[1].split(",")
    assert row[0] == "mock-physician"
    assert row[1] == CASE_LABELS["two_agent"]
    for cell in row[2:]:
        float(cell)
        assert len(cell.split(".")[1]) == 2  # rendered at two decimals


def test_report_json_exact_fractions(run_spec):
    spec, _ = run_spec
    run_batch(spec)
    reports = aggregate_rows(load_results(spec.out_dir))
    payload = report_to_json(reports)
    group = payload["groups"][0]
    num, den = group["category"]["precision"]["exact"].split("/")
    assert Fraction(int(num), int(den)) == reports[0].category.precision


def test_histogram_csv(run_spec):
    spec, _ = run_spec
    run_batch(spec)
    reports = aggregate_rows(load_results(spec.out_dir))
    text = histogram_to_csv(reports)
    assert text.splitlines()[0] == "agent,case,turns,count"
    assert "mock-physician,two-agent,4,6" in text


def test_write_report_files(run_spec, tmp_path):
    spec, _ = run_spec
    run_batch(spec)
    reports = aggregate_rows(load_results(spec.out_dir))
    paths = write_report_files(reports, tmp_path / "reports")
    for path in paths.values():
        assert path.exists()


def test_aggregate_missing_dir_raises(tmp_path):
    with pytest.raises(NoScoresFoundError):
        aggregate_run_dirs([tmp_path / "missing"])


def test_report_row_order_follows_case_order():
    def row(case, model="m"):
        return {"model": model, "case": case, "outcome": "discharged", "turns": 1,
                "category": {k: [1, 2] for k in ("jaccard", "precision", "recall", "f1")}
                | {"hallucinations": 0},
                "chapter": {k: [1, 2] for k in ("jaccard", "precision", "recall", "f1")}
                | {"hallucinations": 0}}

    rows = [row("baseline_full_note"), row("two_agent"), row("baseline_complaint")]
    reports = aggregate_rows(rows)
    assert [r.case for r in reports] == ["baseline_complaint", "two_agent", "baseline_full_note"]


def test_aggregate_permutation_invariant(run_spec):
    spec, _ = run_spec
    run_batch(spec)
    rows = load_results(spec.out_dir)
    forward = report_to_json(aggregate_rows(rows))
    backward = report_to_json(aggregate_rows(list(reversed(rows))))
    assert forward == backward
