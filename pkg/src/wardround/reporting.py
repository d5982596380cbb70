"""Aggregate reports over finished runs.

One report group per (physician model, case): arithmetic means of the four
per-sample metrics at both granularities, plus turn statistics over completed
sessions.  Means stay exact Fractions internally; the CSV rendering rounds to
two decimals.  The CSV is shaped as model/case rows against
Jaccard/Precision/Recall/F1 columns for disease category and disease chapter.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .metrics import TurnStats, mean_fraction, turn_stats
from .orchestrator import RunCase

CASE_LABELS = {
    RunCase.BASELINE_COMPLAINT.value: "phy w/complaint",
    RunCase.TWO_AGENT.value: "two-agent",
    RunCase.BASELINE_FULL_NOTE.value: "phy w/full_note",
    RunCase.HUMAN_IN_LOOP.value: "human-in-loop",
}

CASE_ORDER = [
    RunCase.BASELINE_COMPLAINT.value,
    RunCase.TWO_AGENT.value,
    RunCase.BASELINE_FULL_NOTE.value,
    RunCase.HUMAN_IN_LOOP.value,
]

METRIC_NAMES = ("jaccard", "precision", "recall", "f1")


class NoScoresFoundError(FileNotFoundError):
    pass


class EmptyGroupError(ValueError):
    pass


@dataclass
class MetricMeans:
    jaccard: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction

    def get(self, name: str) -> Fraction:
        return getattr(self, name)


@dataclass
class CaseReport:
    model: str
    case: str
    n_samples: int
    category: MetricMeans
    chapter: MetricMeans
    turns: TurnStats
    hallucinations: int


def load_results(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "results.jsonl"
    if not path.exists():
        raise NoScoresFoundError(f"no results.jsonl under {run_dir}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    if not rows:
        raise NoScoresFoundError(f"results.jsonl under {run_dir} is empty")
    return rows


def _exact(pair) -> Fraction:
    return Fraction(pair[0], pair[1])


def aggregate_rows(rows: list[dict]) -> list[CaseReport]:
    """Group result lines by (model, case) and compute exact means."""
    if not rows:
        raise EmptyGroupError("no result rows to aggregate")
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["model"], row["case"]), []).append(row)

    reports = []
    for (model, case), members in sorted(
            groups.items(),
            key=lambda kv: (kv[0][0], CASE_ORDER.index(kv[0][1])
                            if kv[0][1] in CASE_ORDER else 99)):
        def means(block: str) -> MetricMeans:
            return MetricMeans(**{
                name: mean_fraction([_exact(m[block][name]) for m in members])
                for name in METRIC_NAMES
            })

        reports.append(CaseReport(
            model=model,
            case=case,
            n_samples=len(members),
            category=means("category"),
            chapter=means("chapter"),
            turns=turn_stats((m["turns"], m["outcome"] == "discharged") for m in members),
            hallucinations=sum(m["category"]["hallucinations"] for m in members),
        ))
    return reports


def aggregate_run_dirs(run_dirs: list[str | Path]) -> list[CaseReport]:
    rows: list[dict] = []
    for run_dir in run_dirs:
        rows.extend(load_results(run_dir))
    return aggregate_rows(rows)


def _round2(value: Fraction) -> str:
    return f"{float(value):.2f}"


def report_to_csv(reports: list[CaseReport]) -> str:
    """Model/case rows vs. metric columns at category then chapter granularity."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["agent", "case",
                     "category_jaccard", "category_precision", "category_recall", "category_f1",
                     "chapter_jaccard", "chapter_precision", "chapter_recall", "chapter_f1"])
    for rep in reports:
        writer.writerow([
            rep.model, CASE_LABELS.get(rep.case, rep.case),
            *(_round2(rep.category.get(name)) for name in METRIC_NAMES),
            *(_round2(rep.chapter.get(name)) for name in METRIC_NAMES),
        ])
    return buf.getvalue()


def histogram_to_csv(reports: list[CaseReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["agent", "case", "turns", "count"])
    for rep in reports:
        for turns, count in rep.turns.histogram.items():
            writer.writerow([rep.model, CASE_LABELS.get(rep.case, rep.case), turns, count])
    return buf.getvalue()


def report_to_json(reports: list[CaseReport]) -> dict:
    """Full-precision structured report (floats plus exact fraction strings)."""
    def metric_obj(value: Fraction) -> dict:
        return {"mean": float(value), "exact": f"{value.numerator}/{value.denominator}"}

    out = []
    for rep in reports:
        out.append({
            "model": rep.model,
            "case": rep.case,
            "case_label": CASE_LABELS.get(rep.case, rep.case),
            "n_samples": rep.n_samples,
            "category": {name: metric_obj(rep.category.get(name)) for name in METRIC_NAMES},
            "chapter": {name: metric_obj(rep.chapter.get(name)) for name in METRIC_NAMES},
            "turn_mean": (float(rep.turns.mean) if rep.turns.mean is not None else None),
            "turn_mean_exact": (f"{rep.turns.mean.numerator}/{rep.turns.mean.denominator}"
                                if rep.turns.mean is not None else None),
            "turn_histogram": {str(k): v for k, v in rep.turns.histogram.items()},
            "failure_count": rep.turns.failure_count,
            "hallucinations": rep.hallucinations,
        })
    return {"groups": out}


def write_report_files(reports: list[CaseReport], out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "report.csv",
        "json": out_dir / "report.json",
        "histogram": out_dir / "turn_histogram.csv",
    }
    paths["csv"].write_text(report_to_csv(reports), encoding="utf-8")
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(report_to_json(reports), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["histogram"].write_text(histogram_to_csv(reports), encoding="utf-8")
    return paths
