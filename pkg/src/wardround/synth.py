"""Format-conforming synthetic clinical records for license-free testing.

Every generated record carries the twelve required sections, passes the
inclusion filter, and keeps diagnosis wording out of the agent-visible
sections so leakage checks stay meaningful.  Generation is driven entirely by
the portable seeded stream in rng.py: the same (seed, n) is byte-identical
everywhere.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

from .icd10 import CodeTable, normalize, sample_code_table
from .records import ClinicalRecord
from .rng import Rng
from .sections import parse_sections

DEFAULT_MEAN_CODES = 5.61

_SCENARIOS = [
    {
        "complaint": "Chest pain",
        "hpi": "presented with several hours of substernal chest pressure radiating to the left arm, associated with diaphoresis",
        "exam": "Diaphoretic, uncomfortable. Regular rate, no murmurs. Lungs clear.",
        "results": "Troponin elevated and trending. ECG with ST depressions in lateral leads.",
        "primary": "I21.4",
    },
    {
        "complaint": "Shortness of breath",
        "hpi": "reports three days of worsening dyspnea on exertion with increased sputum production and wheezing",
        "exam": "Diffuse expiratory wheezes, prolonged expiratory phase. Speaking in short sentences.",
        "results": "Chest radiograph hyperinflated without focal consolidation. ABG with mild hypercapnia.",
        "primary": "J44.1",
    },
    {
        "complaint": "Fever and productive cough",
        "hpi": "developed fevers to 39C with a productive cough and right-sided pleuritic pain over four days",
        "exam": "Febrile. Crackles at the right base with egophony.",
        "results": "Chest radiograph with right lower lobe consolidation. White count 15.2.",
        "primary": "J18.9",
    },
    {
        "complaint": "Abdominal pain",
        "hpi": "describes periumbilical pain migrating to the right lower quadrant with anorexia and nausea since yesterday",
        "exam": "Tenderness at McBurney's point with guarding. No rebound elsewhere.",
        "results": "CT abdomen with a dilated, fluid-filled appendix and fat stranding.",
        "primary": "K35.80",
    },
    {
        "complaint": "Burning with urination",
        "hpi": "notes two days of dysuria, frequency, and suprapubic discomfort without flank pain",
        "exam": "Suprapubic tenderness. No costovertebral angle tenderness.",
        "results": "Urinalysis with positive nitrites and leukocyte esterase; culture pending.",
        "primary": "N39.0",
    },
    {
        "complaint": "Dizziness",
        "hpi": "reports room-spinning sensation on standing with unsteady gait since this morning",
        "exam": "Orthostatic vital signs positive. Neurologic exam nonfocal.",
        "results": "Basic metabolic panel with mild prerenal pattern. Head CT without acute findings.",
        "primary": "R42",
    },
    {
        "complaint": "Passed out at home",
        "hpi": "had a witnessed transient loss of consciousness while standing, with rapid return to baseline",
        "exam": "Well appearing. Normal cardiac and neurologic examinations.",
        "results": "ECG normal sinus rhythm. Telemetry without arrhythmia overnight.",
        "primary": "R55",
    },
    {
        "complaint": "Severe headache",
        "hpi": "describes a throbbing unilateral headache with photophobia and nausea, similar to prior episodes",
        "exam": "Photophobic. Cranial nerves intact, no meningismus.",
        "results": "Neurologic workup unremarkable.",
        "primary": "G43.909",
    },
    {
        "complaint": "Leg redness and swelling",
        "hpi": "noticed spreading warmth, redness, and swelling of the left lower leg over two days after a minor scrape",
        "exam": "Left calf erythema with warmth and tenderness; margins marked.",
        "results": "Ultrasound negative for deep venous thrombosis.",
        "primary": "L03.90",
    },
    {
        "complaint": "Fall with hip pain",
        "hpi": "fell from standing height onto the right side and has been unable to bear weight since",
        "exam": "Right leg shortened and externally rotated. Distal pulses intact.",
        "results": "Radiographs with a fracture through the femoral neck on the right.",
        "primary": "S72.001A",
    },
    {
        "complaint": "Palpitations",
        "hpi": "reports several hours of irregular rapid heartbeat with mild lightheadedness",
        "exam": "Irregularly irregular rhythm, rate 130s. No murmur.",
        "results": "ECG with irregularly irregular narrow-complex tachycardia.",
        "primary": "I48.91",
    },
    {
        "complaint": "Swelling under the tongue",
        "hpi": "has rapidly progressive submandibular swelling, drooling, and pain with swallowing after a dental infection",
        "exam": "Firm, tender swelling of the floor of the mouth with elevated tongue.",
        "results": "CT neck with bilateral submandibular space inflammation.",
        "primary": "K12.2",
    },
]

_SOCIAL = [
    "Lives alone. Former smoker, quit ten years ago. Occasional alcohol.",
    "Lives with spouse. Never smoker. No alcohol or drug use.",
    "Retired teacher. Smokes half a pack daily. Denies alcohol.",
    "Works in construction. Social drinker. No tobacco.",
]

_ADMIT_MEDS = [
    "1. Multivitamin daily\n2. Acetaminophen as needed",
    "1. Lisinopril 10 mg daily\n2. Atorvastatin 20 mg nightly",
    "1. Metformin 500 mg twice daily\n2. Aspirin 81 mg daily",
    "1. Omeprazole 20 mg daily",
]

_DISCHARGE_MEDS = [
    "1. Continue home medications\n2. Acetaminophen 650 mg every six hours as needed",
    "1. Continue home medications as previously prescribed",
    "1. New prescription provided at discharge\n2. Continue home medications",
]

_CONDITIONS = ["Stable.", "Good.", "Improved.", "Alert, ambulatory, tolerating a regular diet."]

_PMH = [
    "Hypertension. Osteoarthritis.",
    "No significant past medical history.",
    "Seasonal allergies.",
    "Remote appendectomy.",
]

_PROCEDURES = ["None.", "None during this admission.", "Peripheral intravenous line placement."]

_INSTRUCTIONS = (
    "You were admitted for evaluation and treatment. Please take your medications as "
    "prescribed, keep your follow-up appointments, and return to the emergency department "
    "for worsening symptoms."
)

_COURSE = (
    "The patient was admitted and monitored. Targeted workup was completed and treatment "
    "was started with good clinical response. Symptoms improved and the patient was "
    "discharged with follow-up arranged."
)


def _build_note(rng: Rng, scenario: dict, missing: Optional[str] = None,
                condition: Optional[str] = None) -> str:
    """One note's full text; optionally omit a required section or force status."""
    sections = [
        ("Chief Complaint", scenario["complaint"]),
        ("History of Present Illness", f"The patient {scenario['hpi']}."),
        ("Past Medical History", rng.choice(_PMH)),
        ("Social History", rng.choice(_SOCIAL)),
        ("Allergies", "No known drug allergies."),
        ("Physical Exam", scenario["exam"]),
        ("Pertinent Results", scenario["results"]),
        ("Major Surgical or Invasive Procedure", rng.choice(_PROCEDURES)),
        ("Brief Hospital Course", _COURSE),
        ("Medications on Admission", rng.choice(_ADMIT_MEDS)),
        ("Discharge Medications", rng.choice(_DISCHARGE_MEDS)),
        ("Discharge Diagnosis", "{diagnosis}"),
        ("Discharge Condition", condition if condition is not None else rng.choice(_CONDITIONS)),
        ("Discharge Instructions", _INSTRUCTIONS),
    ]
    parts = []
    for heading, body in sections:
        if missing and heading.lower() == missing:
            continue
        parts.append(f"{heading}:\n{body}\n")
    return "\n".join(parts)


def _pick_codes(rng: Rng, table: CodeTable, primary: str, mean_codes: float) -> list[str]:
    """Primary code plus distinct extras; count has the configured mean."""
    pool = [c for c in table.codes() if c != primary.replace(".", "").upper()]
    extra = min(rng.poisson(max(mean_codes - 1.0, 0.0)), len(pool))
    return [primary] + rng.sample(pool, extra)


def _diagnosis_body(table: CodeTable, codes: list[str]) -> str:
    lines = []
    for i, code in enumerate(codes, start=1):
        desc = table.description_of(code) or code
        lines.append(f"{i}. {desc}")
    return "\n".join(lines)


def generate_synthetic(seed: int, n: int, code_table: Optional[CodeTable] = None,
                       mean_codes: float = DEFAULT_MEAN_CODES) -> list[ClinicalRecord]:
    """n filter-passing records with gold codes drawn from the code table."""
    if n < 1:
        raise ValueError("n must be >= 1")
    table = code_table or sample_code_table()
    rng = Rng(seed)
    records = []
    for i in range(n):
        scenario = rng.choice(_SCENARIOS)
        codes = _pick_codes(rng, table, scenario["primary"], mean_codes)
        note = _build_note(rng, scenario).replace("{diagnosis}", _diagnosis_body(table, codes))
        record = ClinicalRecord(
            record_id=f"synth-{i:05d}",
            sections=parse_sections(note),
            gold_codes=tuple(normalize(c) for c in codes),
        )
        record.validate()
        records.append(record)
    return records


def generate_raw_corpus(seed: int, n_keep: int, n_deceased: int = 0, n_missing_section: int = 0,
                        code_table: Optional[CodeTable] = None,
                        mean_codes: float = DEFAULT_MEAN_CODES,
                        icd9_every: int = 3) -> tuple[list[dict], list[dict]]:
    """Raw (notes, diagnoses) rows for exercising ingestion.

    Produces n_keep conforming records, n_deceased with a deceased/expired
    discharge condition, and n_missing_section each lacking one required
    section.  Every icd9_every-th keeper also gets a version-9 diagnosis row,
    which ingestion must drop.
    """
    table = code_table or sample_code_table()
    rng = Rng(seed)
    required_cycle = [
        "social history", "pertinent results", "brief hospital course",
        "medications on admission", "physical exam",
    ]
    note_rows: list[dict] = []
    diag_rows: list[dict] = []
    idx = 0

    def add(kind: str, missing: Optional[str], condition: Optional[str]) -> None:
        nonlocal idx
        scenario = rng.choice(_SCENARIOS)
        codes = _pick_codes(rng, table, scenario["primary"], mean_codes)
        record_id = f"raw-{idx:05d}"
        note = _build_note(rng, scenario, missing=missing, condition=condition)
        note = note.replace("{diagnosis}", _diagnosis_body(table, codes))
        note_rows.append({"record_id": record_id, "note_text": note})
        for code in codes:
            diag_rows.append({"record_id": record_id, "icd_code": code, "icd_version": "10"})
        if kind == "keep" and icd9_every and idx % icd9_every == 0:
            diag_rows.append({"record_id": record_id, "icd_code": "4019", "icd_version": "9"})
        idx += 1

    for _ in range(n_keep):
        add("keep", None, None)
    for k in range(n_deceased):
        add("deceased", None, "Expired." if k % 2 == 0 else "Deceased.")
    for k in range(n_missing_section):
        add("malformed", required_cycle[k % len(required_cycle)], None)
    return note_rows, diag_rows


def write_raw_files(note_rows: list[dict], diag_rows: list[dict],
                    notes_path: str | Path, diagnoses_path: str | Path) -> None:
    """Write raw rows as CSV or JSONL depending on the target extension."""
    for rows, path, fields in (
        (note_rows, Path(notes_path), ["record_id", "note_text"]),
        (diag_rows, Path(diagnoses_path), ["record_id", "icd_code", "icd_version"]),
    ):
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() in {".jsonl", ".ndjson"}:
            with open(path, "w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fields)
                writer.writeheader()
                writer.writerows(rows)
