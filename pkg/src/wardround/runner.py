"""Batch execution of dialogue sessions over a record set.

A run directory holds manifest.json, results.jsonl (one scored line per
record), and transcripts/<record_id>.jsonl (one transcript event per line).
Runs are resumable: record ids already present in results.jsonl are skipped.
Sessions fan out across a thread pool; all writes happen on the caller's
thread so each file has a single writer.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .icd10 import ChapterTable, CodeTable
from .metrics import Granularity, SampleScore, sample_metrics, zero_score
from .orchestrator import (DialogueConfig, DialogueSession, RunCase, load_template,
                           run_dialogue)
from .records import ClinicalRecord

BackendFactory = Callable[[str], object]  # record_id -> backend


@dataclass
class RunSpec:
    case: RunCase
    records: list[ClinicalRecord]
    out_dir: Path
    physician_factory: BackendFactory
    assistant_factory: Optional[BackendFactory] = None
    physician_model: str = "unknown"
    assistant_model: Optional[str] = None
    dialogue: DialogueConfig = field(default_factory=DialogueConfig)
    chapter_table: Optional[ChapterTable] = None
    code_table: Optional[CodeTable] = None
    concurrency: int = 1
    config_snapshot: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.case is RunCase.TWO_AGENT and self.assistant_factory is None:
            raise ValueError("two-agent runs need an assistant backend")
        if self.case is not RunCase.TWO_AGENT and self.assistant_factory is not None:
            raise ValueError(f"{self.case.value} runs take no assistant backend")


@dataclass
class RunSummary:
    total: int
    skipped: int
    executed: int
    discharged: int
    failed: int

    @property
    def failure_rate(self) -> float:
        done = self.executed
        return (self.failed / done) if done else 0.0


def _fraction_pair(value: Fraction) -> list[int]:
    return [value.numerator, value.denominator]


def score_line(record: ClinicalRecord, session: DialogueSession,
               chapter_table: Optional[ChapterTable],
               code_table: Optional[CodeTable]) -> dict:
    """The results.jsonl line for one finished session."""
    if session.discharged and session.discharge is not None:
        cat = sample_metrics(record.gold_codes, session.discharge.codes,
                             Granularity.CATEGORY, chapter_table, code_table)
        chap = sample_metrics(record.gold_codes, session.discharge.codes,
                              Granularity.CHAPTER, chapter_table, code_table)
        discharge = session.discharge.to_dict()
    else:
        cat = zero_score(Granularity.CATEGORY)
        chap = zero_score(Granularity.CHAPTER)
        discharge = None

    def block(score: SampleScore) -> dict:
        return {
            "jaccard": _fraction_pair(score.jaccard),
            "precision": _fraction_pair(score.precision),
            "recall": _fraction_pair(score.recall),
            "f1": _fraction_pair(score.f1),
            "hallucinations": score.hallucination_count,
        }

    return {
        "record_id": record.record_id,
        "case": session.case.value,
        "model": session.physician_model,
        "assistant_model": session.assistant_model,
        "outcome": session.outcome,
        "failure_reason": session.failure_reason.value if session.failure_reason else None,
        "turns": session.turn_count,
        "nudges": session.nudge_count,
        "discharge": discharge,
        "category": block(cat),
        "chapter": block(chap),
        "elapsed_s": round(session.elapsed_s, 6),
    }


def completed_record_ids(out_dir: Path) -> set[str]:
    results = Path(out_dir) / "results.jsonl"
    done = set()
    if results.exists():
        with open(results, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    done.add(json.loads(line)["record_id"])
    return done


def _template_hashes() -> dict:
    out = {}
    for name in ("baseline", "chief_physician", "physician_assistant"):
        text = load_template(name)
        out[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return out


def write_manifest(spec: RunSpec, started: str, finished: Optional[str] = None) -> None:
    manifest = {
        "case": spec.case.value,
        "physician_model": spec.physician_model,
        "assistant_model": spec.assistant_model,
        "record_count": len(spec.records),
        "max_turns": spec.dialogue.max_turns,
        "max_nudges": spec.dialogue.max_nudges,
        "concurrency": spec.concurrency,
        "version": __version__,
        "prompt_hashes": _template_hashes(),
        "config": spec.config_snapshot,
        "started": started,
        "finished": finished,
    }
    with open(spec.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_transcript(out_dir: Path, session: DialogueSession) -> None:
    tdir = Path(out_dir) / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    path = tdir / f"{session.record_id}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "kind": "meta",
            "record_id": session.record_id,
            "case": session.case.value,
            "physician_model": session.physician_model,
            "assistant_model": session.assistant_model,
        }, ensure_ascii=False, sort_keys=True) + "\n")
        for event in session.events:
            fh.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        fh.write(json.dumps({
            "kind": "outcome",
            "outcome": session.outcome,
            "failure_reason": session.failure_reason.value if session.failure_reason else None,
            "turns": session.turn_count,
            "nudges": session.nudge_count,
            "discharge": session.discharge.to_dict() if session.discharge else None,
        }, ensure_ascii=False, sort_keys=True) + "\n")


def run_batch(spec: RunSpec, progress: Optional[Callable[[str, DialogueSession], None]] = None) -> RunSummary:
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    write_manifest(spec, started)

    done = completed_record_ids(spec.out_dir)
    todo = [r for r in spec.records if r.record_id not in done]
    skipped = len(spec.records) - len(todo)

    discharged = 0
    failed = 0
    results_path = spec.out_dir / "results.jsonl"

    def run_one(record: ClinicalRecord) -> tuple[ClinicalRecord, DialogueSession]:
        physician = spec.physician_factory(record.record_id)
        assistant = (spec.assistant_factory(record.record_id)
                     if spec.assistant_factory is not None else None)
        session = run_dialogue(spec.case, record, physician, assistant, spec.dialogue)
        return record, session

    with open(results_path, "a", encoding="utf-8") as results:
        if spec.concurrency == 1:
            iterator = map(run_one, todo)
            for record, session in iterator:
                _finish_one(spec, results, record, session)
                discharged += session.discharged
                failed += not session.discharged
                if progress:
                    progress(record.record_id, session)
        else:
            with ThreadPoolExecutor(max_workers=spec.concurrency) as pool:
                futures = [pool.submit(run_one, record) for record in todo]
                for fut in as_completed(futures):
                    record, session = fut.result()
                    _finish_one(spec, results, record, session)
                    discharged += session.discharged
                    failed += not session.discharged
                    if progress:
                        progress(record.record_id, session)

    write_manifest(spec, started, finished=datetime.now(timezone.utc).isoformat())
    return RunSummary(total=len(spec.records), skipped=skipped, executed=len(todo),
                      discharged=discharged, failed=failed)


def _finish_one(spec: RunSpec, results_fh, record: ClinicalRecord,
                session: DialogueSession) -> None:
    write_transcript(spec.out_dir, session)
    line = score_line(record, session, spec.chapter_table, spec.code_table)
    results_fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")
    results_fh.flush()
