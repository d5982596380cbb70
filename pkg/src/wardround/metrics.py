"""Per-sample set metrics over predicted vs. gold ICD-10 codes.

Both code sets are rolled up to the requested granularity (3-character
category or chapter id) and deduplicated before scoring, so predicting E10.1
and E10.9 counts once at category level.  Codes that cannot be rolled up
(failed the grammar, or no chapter matches) stay in the prediction set as
sentinels that never match gold.  All arithmetic is exact Fractions; rounding
happens only when a report is rendered.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional

from .icd10 import ChapterTable, CodeTable, Icd10Code, default_chapter_table


class Granularity(str, Enum):
    CATEGORY = "category"
    CHAPTER = "chapter"


class EmptyGoldError(ValueError):
    """Raised when the gold code set is empty."""


_SENTINEL = "?"  # prefix for unrollable codes; never a category or chapter id


def roll_up(codes: Iterable[Icd10Code], granularity: Granularity,
            chapter_table: Optional[ChapterTable] = None) -> set[str]:
    """Deduplicated rollup of codes to category or chapter keys."""
    table = chapter_table or default_chapter_table()
    keys = set()
    for code in codes:
        if granularity is Granularity.CATEGORY:
            key = code.category
        else:
            key = table.chapter_of(code)
        keys.add(key if key is not None else _SENTINEL + code.normalized)
    return keys


@dataclass(frozen=True)
class SampleScore:
    granularity: Granularity
    jaccard: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction
    hallucination_count: int = 0

    def as_floats(self) -> dict:
        return {
            "jaccard": float(self.jaccard),
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
        }


def _hallucinations(pred: Iterable[Icd10Code], code_table: Optional[CodeTable]) -> int:
    count = 0
    for code in pred:
        if not code.syntactic_valid:
            count += 1
        elif code_table is not None and code not in code_table:
            count += 1
    return count


def sample_metrics(gold: Iterable[Icd10Code], pred: Iterable[Icd10Code],
                   granularity: Granularity,
                   chapter_table: Optional[ChapterTable] = None,
                   code_table: Optional[CodeTable] = None) -> SampleScore:
    """Jaccard/precision/recall/F1 over rolled-up sets.

    Empty prediction scores zero on all four metrics.  The hallucination
    count is taken over full prediction codes: grammar failures always count,
    and unknown-to-table codes count when a code table is supplied.
    """
    gold = list(gold)
    pred = list(pred)
    if not gold:
        raise EmptyGoldError("gold code set is empty")
    g = roll_up(gold, granularity, chapter_table)
    p = roll_up(pred, granularity, chapter_table)
    hits = len(p & g)
    precision = Fraction(hits, len(p)) if p else Fraction(0)
    recall = Fraction(hits, len(g))
    jaccard = Fraction(hits, len(p | g))
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else Fraction(0))
    return SampleScore(
        granularity=granularity,
        jaccard=jaccard,
        precision=precision,
        recall=recall,
        f1=f1,
        hallucination_count=_hallucinations(pred, code_table),
    )


def zero_score(granularity: Granularity) -> SampleScore:
    """The score assigned to sessions that never produced a discharge."""
    z = Fraction(0)
    return SampleScore(granularity=granularity, jaccard=z, precision=z, recall=z, f1=z)


def mean_fraction(values: list[Fraction]) -> Fraction:
    if not values:
        raise ValueError("mean of empty list")
    return sum(values, Fraction(0)) / len(values)


@dataclass
class TurnStats:
    mean: Optional[Fraction]          # over completed sessions; None if none completed
    histogram: dict[int, int]         # turn count -> completed-session count
    failure_count: int


def turn_stats(sessions: Iterable[tuple[int, bool]]) -> TurnStats:
    """(turn_count, discharged) pairs -> mean and histogram over discharged ones."""
    histogram: dict[int, int] = {}
    failures = 0
    total = 0
    completed = 0
    for turns, discharged in sessions:
        if not discharged:
            failures += 1
            continue
        histogram[turns] = histogram.get(turns, 0) + 1
        total += turns
        completed += 1
    mean = Fraction(total, completed) if completed else None
    return TurnStats(mean=mean, histogram=dict(sorted(histogram.items())), failure_count=failures)
