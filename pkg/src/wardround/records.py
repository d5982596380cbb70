"""Clinical records: the canonical store, raw-file ingestion, sampling, stats.

A record is one admission: the sectioned discharge note plus its gold ICD-10
code set.  Raw input is a notes file (record_id, note_text) joined with a
diagnoses file (record_id, icd_code, icd_version) on record_id; both files
may be CSV (header row) or JSONL (one object per line).  Rows with
icd_version != 10 are dropped during the join.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .icd10 import Icd10Code, parse_code_list
from .rng import Rng
from .sections import Drop, DropReason, NoteSections, filter_record, parse_sections


class EmptyCorpusError(ValueError):
    """Raised when an operation needs at least one record."""


class NotEnoughRecordsError(ValueError):
    """Raised when a sample asks for more records than exist."""


class FormatError(ValueError):
    def __init__(self, source: str, row: int, message: str):
        super().__init__(f"{source}, row {row}: {message}")
        self.source = source
        self.row = row


@dataclass
class ClinicalRecord:
    record_id: str
    sections: NoteSections
    gold_codes: tuple[Icd10Code, ...]

    @property
    def chief_complaint(self) -> str:
        return self.sections.body_of("chief complaint") or ""

    @property
    def gold_diagnosis_text(self) -> str:
        return self.sections.body_of("discharge diagnosis") or ""

    @property
    def patient_status(self) -> str:
        return self.sections.body_of("discharge condition") or ""

    def validate(self) -> None:
        drop = filter_record(self.sections, self.patient_status)
        if drop is not None:
            raise ValueError(f"record {self.record_id} fails inclusion: {drop.reason.value} {drop.detail}")
        if not self.gold_codes:
            raise ValueError(f"record {self.record_id} has no gold codes")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "sections": self.sections.to_list(),
            "gold_codes": [c.raw for c in self.gold_codes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClinicalRecord":
        codes = parse_code_list(", ".join(data["gold_codes"]))
        return cls(
            record_id=str(data["record_id"]),
            sections=NoteSections.from_list(data["sections"]),
            gold_codes=tuple(codes),
        )


def save_store(records: Iterable[ClinicalRecord], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def load_store(path: str | Path) -> list[ClinicalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ClinicalRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise FormatError(str(path), i, f"bad record line: {exc}") from exc
    return records


def _read_rows(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    """Rows from a CSV (header) or JSONL file, checked for required keys."""
    import csv

    path = Path(path)
    rows: list[dict] = []
    with open(path, encoding="utf-8", newline="") as fh:
        head = fh.read(1)
        fh.seek(0)
        if path.suffix.lower() in {".jsonl", ".ndjson"} or head == "{":
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(str(path), i, f"bad JSON: {exc}") from exc
        else:
            rows.extend(csv.DictReader(fh))
    for i, row in enumerate(rows, start=1):
        for key in required:
            if key not in row or row[key] is None:
                raise FormatError(str(path), i, f"missing column {key!r}")
    return rows


@dataclass
class IngestStats:
    notes_read: int = 0
    diagnosis_rows_read: int = 0
    non_icd10_rows: int = 0
    kept: int = 0
    dropped: dict = field(default_factory=dict)  # DropReason value -> count
    parse_errors: int = 0

    def note_drop(self, reason: DropReason) -> None:
        self.dropped[reason.value] = self.dropped.get(reason.value, 0) + 1


def ingest(notes_path: str | Path, diagnoses_path: str | Path) -> tuple[list[ClinicalRecord], IngestStats]:
    """Join notes with diagnoses, parse sections, and apply inclusion filters."""
    stats = IngestStats()
    note_rows = _read_rows(notes_path, ("record_id", "note_text"))
    diag_rows = _read_rows(diagnoses_path, ("record_id", "icd_code", "icd_version"))
    stats.notes_read = len(note_rows)
    stats.diagnosis_rows_read = len(diag_rows)

    codes_by_record: dict[str, list[str]] = {}
    for row in diag_rows:
        if str(row["icd_version"]).strip() != "10":
            stats.non_icd10_rows += 1
            continue
        codes_by_record.setdefault(str(row["record_id"]), []).append(str(row["icd_code"]))

    records: list[ClinicalRecord] = []
    for row in note_rows:
        record_id = str(row["record_id"])
        try:
            sections = parse_sections(str(row["note_text"]))
        except ValueError:
            stats.parse_errors += 1
            continue
        status = sections.body_of("discharge condition") or ""
        drop = filter_record(sections, status)
        if drop is not None:
            stats.note_drop(drop.reason)
            continue
        codes = parse_code_list(", ".join(codes_by_record.get(record_id, [])))
        if not codes:
            stats.note_drop(DropReason.NO_CODES)
            continue
        records.append(ClinicalRecord(record_id=record_id, sections=sections, gold_codes=tuple(codes)))
    stats.kept = len(records)
    return records, stats


def sample_test_set(records: list[ClinicalRecord], n: int, seed: int) -> list[ClinicalRecord]:
    """Deterministic n-subset of records; same inputs give the same subset.

    Selection is a partial Fisher-Yates shuffle driven by the portable
    splitmix64 stream, so the result is stable across runs and machines.
    """
    if n > len(records):
        raise NotEnoughRecordsError(f"asked for {n} of {len(records)} records")
    if n < 0:
        raise ValueError("n must be non-negative")
    return Rng(seed).sample(records, n)


@dataclass
class CorpusStats:
    record_count: int
    unique_diagnosis_count: int
    total_code_mentions: int
    mean_codes_per_sample: Fraction
    most_common_code: str
    rarest_codes: tuple[str, ...]


def corpus_stats(records: list[ClinicalRecord]) -> CorpusStats:
    """Exact counting over gold code sets; ties broken lexicographically."""
    if not records:
        raise EmptyCorpusError("no records")
    counts: Counter[str] = Counter()
    total = 0
    for rec in records:
        for code in rec.gold_codes:
            counts[code.normalized] += 1
            total += 1
    most_common = min(counts, key=lambda c: (-counts[c], c))
    rarest_count = min(counts.values())
    rarest = tuple(sorted(c for c, k in counts.items() if k == rarest_count))
    return CorpusStats(
        record_count=len(records),
        unique_diagnosis_count=len(counts),
        total_code_mentions=total,
        mean_codes_per_sample=Fraction(total, len(records)),
        most_common_code=most_common,
        rarest_codes=rarest,
    )
