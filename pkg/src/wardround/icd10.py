"""ICD-10 code grammar, normalization, and hierarchy rollup.

A full code like E10.9 normalizes to the dot-free form E109.  Its first three
characters (E10) are the disease category; the category falls into exactly one
chapter range (E00-E89, endocrine).  Syntactic validity is a pure grammar
check; table validity additionally requires membership in a loaded code table
and is what flags hallucinated codes such as M3459.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

# Letter + two alphanumerics + up to four more alphanumerics, no dot.
# U is accepted as a first letter: U-codes (e.g. U07.1) are assigned in
# ICD-10-CM and the default chapter table carries a U chapter.
_CODE_RE = re.compile(r"^[A-Z][0-9A-Z]{2}[0-9A-Z]{0,4}$")

_STRIP_CHARS = " \t\r\n\"'`()[]{}<>.,;:*"


class EmptyTokenError(ValueError):
    """Raised when a code token is empty after trimming."""


class TableNotLoadedError(RuntimeError):
    """Raised when a table-validity check is requested without a code table."""


@dataclass(frozen=True)
class Icd10Code:
    raw: str
    normalized: str
    syntactic_valid: bool
    table_valid: Optional[bool] = None

    @property
    def category(self) -> Optional[str]:
        return self.normalized[:3] if self.syntactic_valid else None

    def with_table_valid(self, value: bool) -> "Icd10Code":
        return replace(self, table_valid=value)

    def __str__(self) -> str:
        return self.normalized


def normalize(raw: str) -> Icd10Code:
    """Normalize one code token: trim punctuation, uppercase, drop the dot.

    Only the conventional dot after the third character is removed; a dot
    anywhere else leaves the token syntactically invalid.
    """
    token = raw.strip().strip(_STRIP_CHARS)
    if not token:
        raise EmptyTokenError(f"empty code token: {raw!r}")
    token = token.upper()
    if len(token) > 3 and token[3] == ".":
        token = token[:3] + token[4:]
    return Icd10Code(raw=raw, normalized=token, syntactic_valid=bool(_CODE_RE.match(token)))


def parse_code_list(codes_field: str) -> list[Icd10Code]:
    """Split a free-form codes string into a duplicate-free, order-stable list.

    Tokens are separated by commas, semicolons, or whitespace.  Tokens that
    normalize to nothing (bare punctuation) are dropped; anything else is kept,
    marked invalid when it fails the grammar.
    """
    out: list[Icd10Code] = []
    seen: set[str] = set()
    for token in re.split(r"[,;\s]+", codes_field or ""):
        if not token:
            continue
        try:
            code = normalize(token)
        except EmptyTokenError:
            continue
        if code.normalized not in seen:
            seen.add(code.normalized)
            out.append(code)
    return out


@dataclass(frozen=True)
class ChapterRange:
    chapter_id: str
    start: str
    end: str
    label: str

    def contains(self, category: str) -> bool:
        return self.start <= category <= self.end


class ChapterTable:
    """Ordered, disjoint category ranges mapping categories to chapters."""

    def __init__(self, ranges: Iterable[ChapterRange]):
        self.ranges = list(ranges)
        self._validate()

    def _validate(self) -> None:
        for r in self.ranges:
            if r.start > r.end:
                raise ValueError(f"chapter {r.chapter_id}: start {r.start} > end {r.end}")
        ordered = sorted(self.ranges, key=lambda r: r.start)
        for a, b in zip(ordered, ordered[1:]):
            if b.start <= a.end:
                raise ValueError(f"overlapping chapters {a.chapter_id} and {b.chapter_id}")

    def chapter_of(self, code: Icd10Code) -> Optional[str]:
        """Chapter id for a code's category, or None when unresolvable."""
        category = code.category
        if category is None:
            return None
        for r in self.ranges:
            if r.contains(category):
                return r.chapter_id
        return None

    def label_of(self, chapter_id: str) -> Optional[str]:
        for r in self.ranges:
            if r.chapter_id == chapter_id:
                return r.label
        return None

    @classmethod
    def from_csv(cls, path: str | Path) -> "ChapterTable":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._from_rows(csv.DictReader(fh), str(path))

    @classmethod
    def _from_rows(cls, rows: Iterable[dict], source: str) -> "ChapterTable":
        ranges = []
        for row in rows:
            try:
                ranges.append(ChapterRange(
                    chapter_id=row["chapter_id"].strip(),
                    start=row["start"].strip().upper(),
                    end=row["end"].strip().upper(),
                    label=row["label"].strip(),
                ))
            except KeyError as exc:
                raise ValueError(f"{source}: missing column {exc}") from exc
        if not ranges:
            raise ValueError(f"{source}: no chapter rows")
        return cls(ranges)


def default_chapter_table() -> ChapterTable:
    """The bundled ICD-10-CM chapter table.

    Range ends are widened to the end of each letter block (e.g. E00-E89
    matches E00-E99) so that every syntactically valid category resolves to
    exactly one chapter; chapter ids keep the official CM bounds.
    """
    ref = resources.files("wardround").joinpath("data/icd10_chapters.csv")
    with ref.open("r", encoding="utf-8") as fh:
        return ChapterTable._from_rows(csv.DictReader(fh), "icd10_chapters.csv")


def chapter_of(code: Icd10Code, table: ChapterTable) -> Optional[str]:
    return table.chapter_of(code)


class CodeTable:
    """Known-code membership table loaded from a code,description CSV."""

    def __init__(self, entries: dict[str, str]):
        self.entries = {}
        for code, description in entries.items():
            norm = normalize(code)
            if not norm.syntactic_valid:
                raise ValueError(f"code table entry not a valid code: {code!r}")
            self.entries[norm.normalized] = description

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code) -> bool:
        norm = code.normalized if isinstance(code, Icd10Code) else normalize(code).normalized
        return norm in self.entries

    def description_of(self, code) -> Optional[str]:
        norm = code.normalized if isinstance(code, Icd10Code) else normalize(code).normalized
        return self.entries.get(norm)

    def codes(self) -> list[str]:
        return sorted(self.entries)

    @classmethod
    def from_csv(cls, path: str | Path) -> "CodeTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no code rows")
        return cls({row["code"]: row.get("description", "") for row in rows})


def sample_code_table() -> CodeTable:
    """Small bundled code table used for synthetic data and demos."""
    ref = resources.files("wardround").joinpath("data/sample_codes.csv")
    with ref.open("r", encoding="utf-8") as fh:
        rows = csv.DictReader(fh)
        return CodeTable({row["code"]: row.get("description", "") for row in rows})


def check_table(code: Icd10Code, table: Optional[CodeTable], prefix_ok: bool = False) -> bool:
    """True when the code exists in the table.

    With prefix_ok, a code also passes when some table entry extends it
    (the model answered at a coarser depth than the table lists).  Off by
    default: a nonexistent code is a hallucination even if its stem is real.
    """
    if table is None:
        raise TableNotLoadedError("no code table loaded")
    if not code.syntactic_valid:
        return False
    if code.normalized in table.entries:
        return True
    if prefix_ok:
        return any(entry.startswith(code.normalized) for entry in table.entries)
    return False
