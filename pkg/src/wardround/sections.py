"""Discharge-note section segmentation and record inclusion filtering.

Notes are segmented on the twelve headings every usable record must carry.
Recognized headings match at line start, case-insensitively, with optional
leading whitespace and an optional trailing colon; text on the heading line
after the colon starts the body.  A standalone "Something:" line that is not
one of the twelve opens an "other" section so unknown material stays intact
and the original text can be reconstructed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

REQUIRED_SECTIONS = (
    "chief complaint",
    "history of present illness",
    "social history",
    "physical exam",
    "pertinent results",
    "major surgical or invasive procedure",
    "brief hospital course",
    "medications on admission",
    "discharge medications",
    "discharge diagnosis",
    "discharge condition",
    "discharge instructions",
)

OTHER = "other"

# Sections whose bodies state the outcome being predicted; they are stripped
# from every agent-visible view of the note.
ANSWER_SECTIONS = frozenset({
    "discharge diagnosis",
    "discharge condition",
    "discharge medications",
    "discharge instructions",
})


class EmptyInputError(ValueError):
    """Raised when the note text is empty or whitespace."""


class DuplicateHeadingError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"duplicate section heading: {name}")
        self.name = name


def _canonical(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip().lower())


_KNOWN_RES = {
    name: re.compile(r"^[ \t]*" + r"[ \t]+".join(re.escape(w) for w in name.split()) +
                     r"[ \t]*:?[ \t]*(?P<rest>.*?)[ \t]*\r?$", re.IGNORECASE)
    for name in REQUIRED_SECTIONS
}

# Standalone heading line: words then a colon and nothing else.
_OTHER_RE = re.compile(r"^[ \t]*(?P<name>[A-Za-z][A-Za-z0-9 /&'\-]{0,60}?)[ \t]*:[ \t]*\r?$")


@dataclass
class Section:
    name: str               # canonical section name, or "other"
    heading: str            # heading text as written ("" for preamble)
    body: str               # body text, stripped
    raw: str                # original lines for round-trip rendering


class NoteSections:
    """Ordered sections of one note."""

    def __init__(self, entries: list[Section]):
        self.entries = entries

    def body_of(self, name: str) -> Optional[str]:
        for s in self.entries:
            if s.name == name:
                return s.body
        return None

    def has_nonempty(self, name: str) -> bool:
        body = self.body_of(name)
        return body is not None and bool(body.strip())

    def missing_required(self) -> list[str]:
        return [name for name in REQUIRED_SECTIONS if not self.has_nonempty(name)]

    def canonical_count(self) -> int:
        return sum(1 for s in self.entries if s.name != OTHER)

    def render(self) -> str:
        return "\n".join(s.raw for s in self.entries)

    def to_list(self) -> list[dict]:
        return [{"name": s.name, "heading": s.heading, "body": s.body, "raw": s.raw}
                for s in self.entries]

    @classmethod
    def from_list(cls, items: list[dict]) -> "NoteSections":
        return cls([Section(**item) for item in items])


def _match_heading(line: str) -> Optional[tuple[str, str, str]]:
    """(canonical_name, heading_as_written, inline_rest) for a heading line."""
    for name, rx in _KNOWN_RES.items():
        m = rx.match(line)
        if m:
            rest = m.group("rest")
            heading = line.strip()
            if rest:
                heading = heading[:len(heading) - len(rest)]
            return name, heading.rstrip().rstrip(":").strip(), rest
    m = _OTHER_RE.match(line)
    if m:
        return OTHER, m.group("name"), ""
    return None


def parse_sections(note_text: str) -> NoteSections:
    """Segment a note into named sections.

    Raises EmptyInputError on blank input and DuplicateHeadingError when one
    of the twelve required headings appears twice.
    """
    if not note_text or not note_text.strip():
        raise EmptyInputError("empty note text")

    lines = note_text.split("\n")
    entries: list[Section] = []
    seen: set[str] = set()

    cur_name = OTHER
    cur_heading = ""
    cur_body: list[str] = []
    cur_raw: list[str] = []
    started = False

    def flush() -> None:
        if not started:
            return
        if cur_name == OTHER and not cur_heading and not any(l.strip() for l in cur_raw):
            return  # blank preamble
        entries.append(Section(
            name=cur_name,
            heading=cur_heading,
            body="\n".join(cur_body).strip(),
            raw="\n".join(cur_raw),
        ))

    for line in lines:
        hit = _match_heading(line)
        if hit:
            name, heading, rest = hit
            if name != OTHER:
                if name in seen:
                    raise DuplicateHeadingError(name)
                seen.add(name)
            flush()
            cur_name, cur_heading = name, heading
            cur_body = [rest] if rest else []
            cur_raw = [line]
            started = True
        else:
            if not started:
                started = True  # preamble bucket
            cur_body.append(line)
            cur_raw.append(line)
    flush()
    return NoteSections(entries)


class DropReason(str, Enum):
    MISSING_SECTION = "missing_section"
    DECEASED_OR_EXPIRED = "deceased_or_expired"
    NO_CODES = "no_codes"


@dataclass(frozen=True)
class Drop:
    reason: DropReason
    detail: str = ""


def filter_record(sections: NoteSections, status: str) -> Optional[Drop]:
    """None to keep; a Drop naming the first failed check otherwise."""
    missing = sections.missing_required()
    if missing:
        return Drop(DropReason.MISSING_SECTION, missing[0])
    lowered = status.lower()
    for word in ("deceased", "expired"):
        if word in lowered:
            return Drop(DropReason.DECEASED_OR_EXPIRED, word)
    return None


def agent_note_view(sections: NoteSections, complaint_only: bool = False) -> str:
    """Render the note as shown to an agent.

    The discharge-outcome sections are always withheld: they contain the
    diagnosis the agents are asked to produce.  With complaint_only, only the
    chief complaint section is rendered.
    """
    parts: list[str] = []
    for s in sections.entries:
        if s.name in ANSWER_SECTIONS:
            continue
        if complaint_only and s.name != "chief complaint":
            continue
        title = s.heading if s.heading else None
        if s.name != OTHER and not title:
            title = s.name.title()
        if title:
            parts.append(f"{title}:\n{s.body}")
        elif s.body:
            parts.append(s.body)
    return "\n\n".join(parts)
