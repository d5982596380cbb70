import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wardround.icd10 import default_chapter_table, sample_code_table
from wardround.synth import generate_synthetic

FULL_NOTE = """Chief Complaint:
chest pain
History of Present Illness:
two days of intermittent chest pain at rest
Social History:
never smoker, works as an accountant
Physical Exam:
comfortable, regular rate and rhythm
Pertinent Results:
troponin negative twice, ecg unremarkable
Major Surgical or Invasive Procedure:
none
Brief Hospital Course:
monitored overnight on telemetry without events
Medications on Admission:
aspirin 81 mg daily
Discharge Medications:
aspirin 81 mg daily, continue home medications
Discharge Diagnosis:
atypical chest pain
Discharge Condition:
stable
Discharge Instructions:
follow up with your primary care physician in one week"""


@pytest.fixture
def full_note_text():
    return FULL_NOTE


@pytest.fixture(scope="session")
def chapter_table():
    return default_chapter_table()


@pytest.fixture(scope="session")
def code_table():
    return sample_code_table()


@pytest.fixture(scope="session")
def synthetic_records():
    return generate_synthetic(seed=13, n=20)
