"""Dialogue state machine between the chief-physician and assistant agents.

The chief physician sees only the chief complaint (except in the full-note
baseline, which sees the whole agent-visible note); the assistant always sees
the full agent-visible note.  Discharge-outcome sections are withheld from
every view.  The physician submits the discharge through a JSON tool call;
malformed terminal attempts draw a corrective nudge, which is recorded in the
transcript but never counted as a dialogue turn.

Turn accounting: every substantive message by either agent is one turn.  A
valid tool call ends the session; in the two-agent case the assistant's
closing reply completes the final exchange, so a session with k completed
physician/assistant exchanges counts exactly 2k turns.  Baseline sessions
have no assistant and always count one turn.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional

from .icd10 import Icd10Code, parse_code_list
from .llm import BackendError, ChatMessage
from .records import ClinicalRecord
from .sections import agent_note_view

TOOL_DIALOGUE = "discharge_text_tool"
TOOL_BASELINE = "baseline_discharge_text_tool"

NUDGE_TEXT = (
    "Your discharge text was not accepted. Submit it again as a single JSON object "
    'with exactly these keys: {"tool": "%s", "diagnosis": "<final diagnosis>", '
    '"codes": "<comma-separated ICD-10 codes>"}. Both diagnosis and codes must be '
    "non-empty, and codes must be a plain string without brackets."
)


class RunCase(str, Enum):
    BASELINE_COMPLAINT = "baseline_complaint"
    BASELINE_FULL_NOTE = "baseline_full_note"
    TWO_AGENT = "two_agent"
    HUMAN_IN_LOOP = "human_in_loop"


BASELINE_CASES = (RunCase.BASELINE_COMPLAINT, RunCase.BASELINE_FULL_NOTE)


class FailureReason(str, Enum):
    MAX_TURNS = "max_turns"
    TOOL_CALL_RETRIES_EXHAUSTED = "tool_call_retries_exhausted"
    BACKEND_ERROR = "backend_error"


class Role(str, Enum):
    CHIEF_PHYSICIAN = "chief_physician"
    ASSISTANT = "assistant"


class MissingTemplateError(FileNotFoundError):
    pass


class LeakageError(RuntimeError):
    """A gold answer fragment reached an agent-visible prompt."""


@dataclass
class DialogueTurn:
    index: int
    role: Role
    content: str
    is_tool_call: bool = False
    wall_time: float = 0.0


@dataclass
class TranscriptEvent:
    kind: str                       # turn | attempt | nudge
    content: str
    role: Optional[Role] = None
    index: Optional[int] = None
    is_tool_call: bool = False

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "content": self.content}
        if self.role is not None:
            out["role"] = self.role.value
        if self.index is not None:
            out["index"] = self.index
        if self.kind == "turn":
            out["is_tool_call"] = self.is_tool_call
        return out


@dataclass
class DischargeText:
    diagnosis: str
    codes_raw: str
    codes: tuple[Icd10Code, ...]

    def to_dict(self) -> dict:
        return {
            "diagnosis": self.diagnosis,
            "codes_raw": self.codes_raw,
            "codes": [c.normalized for c in self.codes],
        }


@dataclass
class DialogueConfig:
    max_turns: int = 40
    max_nudges: int = 2


@dataclass
class DialogueSession:
    record_id: str
    case: RunCase
    physician_model: str
    assistant_model: Optional[str]
    turns: list[DialogueTurn] = field(default_factory=list)
    events: list[TranscriptEvent] = field(default_factory=list)
    outcome: str = "failed"          # discharged | failed
    failure_reason: Optional[FailureReason] = None
    discharge: Optional[DischargeText] = None
    nudge_count: int = 0
    elapsed_s: float = 0.0

    @property
    def turn_count(self) -> int:
        return len(self.turns)

    @property
    def discharged(self) -> bool:
        return self.outcome == "discharged"


_TEMPLATES = {
    "baseline": "baseline.txt",
    "chief_physician": "chief_physician.txt",
    "physician_assistant": "physician_assistant.txt",
}


def load_template(name: str) -> str:
    try:
        filename = _TEMPLATES[name]
    except KeyError:
        raise MissingTemplateError(f"unknown template: {name}") from None
    ref = resources.files("wardround").joinpath(f"prompts/{filename}")
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingTemplateError(f"template file missing: {filename}") from None


def _fill(template: str, note: str) -> str:
    return template.replace("{clinicalNote}", note)


def expected_tool_for(case: RunCase) -> str:
    return TOOL_BASELINE if case in BASELINE_CASES else TOOL_DIALOGUE


def build_prompts(case: RunCase, record: ClinicalRecord) -> tuple[str, Optional[str]]:
    """(physician system prompt, assistant system prompt or None)."""
    complaint_view = agent_note_view(record.sections, complaint_only=True)
    full_view = agent_note_view(record.sections, complaint_only=False)
    if case is RunCase.BASELINE_COMPLAINT:
        return _fill(load_template("baseline"), complaint_view), None
    if case is RunCase.BASELINE_FULL_NOTE:
        return _fill(load_template("baseline"), full_view), None
    physician = _fill(load_template("chief_physician"), complaint_view)
    assistant = _fill(load_template("physician_assistant"), full_view)
    return physician, assistant


def gold_tokens(record: ClinicalRecord) -> list[str]:
    """Strings whose appearance in an agent-visible text counts as leakage."""
    tokens = []
    diagnosis = record.gold_diagnosis_text.strip()
    if diagnosis:
        tokens.append(re.sub(r"\s+", " ", diagnosis))
    for code in record.gold_codes:
        tokens.append(code.normalized)
        raw = code.raw.strip().upper()
        if raw and raw != code.normalized:
            tokens.append(raw)
    return tokens


def contains_gold(text: str, record: ClinicalRecord) -> bool:
    flat = re.sub(r"\s+", " ", text).upper()
    for token in gold_tokens(record):
        if token.upper() in flat:
            return True
    return False


def extract_tool_call(message: str, expected_tool: str) -> Optional[DischargeText]:
    """First JSON object in the message naming the expected tool, or None.

    The scan accepts the object fenced or inline.  A codes value given as a
    list is joined; brackets are stripped from the codes string either way.
    Empty diagnosis or codes invalidate the call.
    """
    for obj in _json_objects(message):
        if obj.get("tool") != expected_tool:
            continue
        diagnosis = obj.get("diagnosis")
        codes = obj.get("codes")
        if isinstance(codes, list):
            codes = ", ".join(str(c) for c in codes)
        if not isinstance(diagnosis, str) or not isinstance(codes, str):
            return None
        diagnosis = diagnosis.strip()
        codes = codes.replace("[", "").replace("]", "").strip()
        if not diagnosis or not codes:
            return None
        return DischargeText(diagnosis=diagnosis, codes_raw=codes,
                             codes=tuple(parse_code_list(codes)))
    return None


def _json_objects(text: str):
    """Balanced {...} slices that parse as JSON objects, in order of their
    opening brace.  Nested objects are scanned too, so a tool call wrapped in
    an outer object or preceded by malformed braces is still found."""
    n = len(text)
    for i in range(n):
        if text[i] != "{":
            continue
        depth = 0
        in_str = False
        escaped = False
        for j in range(i, n):
            ch = text[j]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[i:j + 1])
                    except json.JSONDecodeError:
                        pass
                    else:
                        if isinstance(obj, dict):
                            yield obj
                    break


def looks_like_tool_attempt(message: str, expected_tool: str) -> bool:
    """Heuristic for a message that tried to discharge but failed the contract."""
    if expected_tool in message:
        return True
    for obj in _json_objects(message):
        if "tool" in obj or ("diagnosis" in obj and "codes" in obj):
            return True
    return False


def render_tool_call(tool: str, diagnosis: str, codes: str) -> str:
    return json.dumps({"tool": tool, "diagnosis": diagnosis, "codes": codes},
                      ensure_ascii=False)


def run_dialogue(case: RunCase, record: ClinicalRecord, physician,
                 assistant=None, config: Optional[DialogueConfig] = None) -> DialogueSession:
    """Run one session to discharge or failure and return its full record."""
    config = config or DialogueConfig()
    if case is RunCase.HUMAN_IN_LOOP:
        raise ValueError("human sessions are driven by the session service")
    if case is RunCase.TWO_AGENT:
        if assistant is None:
            raise ValueError("two-agent case needs an assistant backend")
        if config.max_turns < 2:
            raise ValueError("two-agent case needs max_turns >= 2")
    elif assistant is not None:
        raise ValueError(f"{case.value} takes no assistant backend")

    tool = expected_tool_for(case)
    physician_system, assistant_system = build_prompts(case, record)
    for prompt in (physician_system, assistant_system or ""):
        if prompt and contains_gold(prompt, record):
            raise LeakageError(f"gold answer leaked into a prompt for {record.record_id}")

    session = DialogueSession(
        record_id=record.record_id,
        case=case,
        physician_model=getattr(physician, "model_id", "unknown"),
        assistant_model=getattr(assistant, "model_id", None) if assistant else None,
    )
    start = time.monotonic()
    try:
        if case in BASELINE_CASES:
            _run_baseline(session, physician, physician_system, tool, config)
        else:
            _run_two_agent(session, physician, assistant, physician_system,
                           assistant_system, tool, config)
    except BackendError:
        session.outcome = "failed"
        session.failure_reason = FailureReason.BACKEND_ERROR
    session.elapsed_s = time.monotonic() - start
    return session


def _add_turn(session: DialogueSession, role: Role, content: str,
              is_tool_call: bool = False, wall_time: float = 0.0) -> DialogueTurn:
    turn = DialogueTurn(index=len(session.turns) + 1, role=role, content=content,
                        is_tool_call=is_tool_call, wall_time=wall_time)
    session.turns.append(turn)
    session.events.append(TranscriptEvent(kind="turn", content=content, role=role,
                                          index=turn.index, is_tool_call=is_tool_call))
    return turn


def _add_aux(session: DialogueSession, kind: str, content: str,
             role: Optional[Role] = None) -> None:
    session.events.append(TranscriptEvent(kind=kind, content=content, role=role))


def _timed_chat(backend, view: list[ChatMessage]) -> tuple[str, float]:
    t0 = time.monotonic()
    reply = backend.chat(view)
    return reply.content, time.monotonic() - t0


def _run_baseline(session: DialogueSession, physician, physician_system: str,
                  tool: str, config: DialogueConfig) -> None:
    view = [ChatMessage("system", physician_system)]
    while True:
        content, dt = _timed_chat(physician, view)
        discharge = extract_tool_call(content, tool)
        if discharge is not None:
            _add_turn(session, Role.CHIEF_PHYSICIAN, content, is_tool_call=True, wall_time=dt)
            session.outcome = "discharged"
            session.discharge = discharge
            return
        _add_aux(session, "attempt", content, Role.CHIEF_PHYSICIAN)
        if session.nudge_count >= config.max_nudges:
            session.outcome = "failed"
            session.failure_reason = FailureReason.TOOL_CALL_RETRIES_EXHAUSTED
            return
        session.nudge_count += 1
        nudge = NUDGE_TEXT % tool
        _add_aux(session, "nudge", nudge)
        view = view + [ChatMessage("assistant", content), ChatMessage("user", nudge)]


def _run_two_agent(session: DialogueSession, physician, assistant,
                   physician_system: str, assistant_system: str,
                   tool: str, config: DialogueConfig) -> None:
    phys_view = [ChatMessage("system", physician_system)]
    asst_view = [ChatMessage("system", assistant_system)]

    while True:
        if session.turn_count >= config.max_turns:
            session.outcome = "failed"
            session.failure_reason = FailureReason.MAX_TURNS
            return

        content, dt = _timed_chat(physician, phys_view)
        discharge = extract_tool_call(content, tool)
        if discharge is not None:
            _add_turn(session, Role.CHIEF_PHYSICIAN, content, is_tool_call=True, wall_time=dt)
            phys_view = phys_view + [ChatMessage("assistant", content)]
            asst_view = asst_view + [ChatMessage("user", content)]
            closing, dt2 = _timed_chat(assistant, asst_view)
            _add_turn(session, Role.ASSISTANT, closing, wall_time=dt2)
            session.outcome = "discharged"
            session.discharge = discharge
            return

        if looks_like_tool_attempt(content, tool):
            _add_aux(session, "attempt", content, Role.CHIEF_PHYSICIAN)
            if session.nudge_count >= config.max_nudges:
                session.outcome = "failed"
                session.failure_reason = FailureReason.TOOL_CALL_RETRIES_EXHAUSTED
                return
            session.nudge_count += 1
            nudge = NUDGE_TEXT % tool
            _add_aux(session, "nudge", nudge)
            phys_view = phys_view + [ChatMessage("assistant", content), ChatMessage("user", nudge)]
            continue

        _add_turn(session, Role.CHIEF_PHYSICIAN, content, wall_time=dt)
        phys_view = phys_view + [ChatMessage("assistant", content)]
        asst_view = asst_view + [ChatMessage("user", content)]

        if session.turn_count >= config.max_turns:
            session.outcome = "failed"
            session.failure_reason = FailureReason.MAX_TURNS
            return

        reply, dt = _timed_chat(assistant, asst_view)
        _add_turn(session, Role.ASSISTANT, reply, wall_time=dt)
        asst_view = asst_view + [ChatMessage("assistant", reply)]
        phys_view = phys_view + [ChatMessage("user", reply)]
