"""HTTP session service: a human chief physician against the assistant agent.

Endpoints: POST /sessions, GET /sessions/{id}, POST /sessions/{id}/message
(SSE token stream; ?stream=false for plain JSON), POST /sessions/{id}/discharge,
GET /records, GET /reports/{run_id}.  Until a session is discharged its
responses expose only the chief complaint and the dialogue itself; gold codes
and the gold diagnosis appear solely in the post-discharge scorecard.  One
assistant generation may be in flight per session; concurrent posts get 409.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .icd10 import ChapterTable, CodeTable, check_table, default_chapter_table, parse_code_list
from .llm import BackendError, ChatMessage
from .metrics import Granularity, SampleScore, roll_up, sample_metrics
from .orchestrator import (DialogueConfig, DialogueTurn, Role, RunCase, TOOL_DIALOGUE,
                           build_prompts, render_tool_call, run_dialogue)
from .records import ClinicalRecord, load_store
from .reporting import aggregate_run_dirs, report_to_json


@dataclass
class ServiceSettings:
    records_path: Optional[str] = None
    sessions_dir: str = "sessions"
    runs_root: str = "runs"
    chapter_table_path: Optional[str] = None
    code_table_path: Optional[str] = None
    cors_origins: tuple[str, ...] = ("*",)
    static_dir: Optional[str] = None
    max_turns: int = 40
    max_nudges: int = 2


class CreateSessionBody(BaseModel):
    record_id: str
    case: str = RunCase.HUMAN_IN_LOOP.value


class MessageBody(BaseModel):
    text: Optional[str] = None


class DischargeBody(BaseModel):
    diagnosis: str
    codes: str


@dataclass
class SessionRuntime:
    session_id: str
    record: ClinicalRecord
    case: RunCase
    assistant_system: Optional[str]
    path: Path
    status: str = "open"            # open | awaiting_assistant | discharged | failed
    turns: list[DialogueTurn] = field(default_factory=list)
    pending_reply: bool = False      # last physician turn still unanswered
    score: Optional[dict] = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def assistant_view(self) -> list[ChatMessage]:
        view = [ChatMessage("system", self.assistant_system or "")]
        for turn in self.turns:
            role = "user" if turn.role is Role.CHIEF_PHYSICIAN else "assistant"
            view.append(ChatMessage(role, turn.content))
        return view

    def append_turn(self, role: Role, content: str, is_tool_call: bool = False) -> DialogueTurn:
        turn = DialogueTurn(index=len(self.turns) + 1, role=role, content=content,
                            is_tool_call=is_tool_call)
        self.turns.append(turn)
        return turn


def _turn_view(turn: DialogueTurn) -> dict:
    return {"index": turn.index, "role": turn.role.value, "content": turn.content,
            "is_tool_call": turn.is_tool_call}


def _persist(runtime: SessionRuntime, obj: dict) -> None:
    runtime.path.parent.mkdir(parents=True, exist_ok=True)
    with open(runtime.path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def _score_block(score: SampleScore) -> dict:
    def pair(value: Fraction) -> dict:
        return {"value": float(value), "exact": f"{value.numerator}/{value.denominator}"}

    return {
        "jaccard": pair(score.jaccard),
        "precision": pair(score.precision),
        "recall": pair(score.recall),
        "f1": pair(score.f1),
        "hallucinations": score.hallucination_count,
    }


def build_scorecard(record: ClinicalRecord, diagnosis: str, codes_raw: str,
                    chapter_table: ChapterTable,
                    code_table: Optional[CodeTable]) -> dict:
    pred = parse_code_list(codes_raw)
    cat = sample_metrics(record.gold_codes, pred, Granularity.CATEGORY,
                         chapter_table, code_table)
    chap = sample_metrics(record.gold_codes, pred, Granularity.CHAPTER,
                          chapter_table, code_table)
    gold_cat = roll_up(record.gold_codes, Granularity.CATEGORY, chapter_table)
    pred_cat = roll_up(pred, Granularity.CATEGORY, chapter_table)
    gold_chap = roll_up(record.gold_codes, Granularity.CHAPTER, chapter_table)
    pred_chap = roll_up(pred, Granularity.CHAPTER, chapter_table)
    hallucinated = []
    for code in pred:
        if not code.syntactic_valid:
            hallucinated.append(code.raw.strip())
        elif code_table is not None and not check_table(code, code_table):
            hallucinated.append(code.raw.strip())
    return {
        "diagnosis": diagnosis,
        "predicted_codes": [c.normalized for c in pred],
        "category": _score_block(cat),
        "chapter": _score_block(chap),
        "matched_categories": sorted(gold_cat & pred_cat),
        "missed_categories": sorted(gold_cat - pred_cat),
        "matched_chapters": sorted(gold_chap & pred_chap),
        "missed_chapters": sorted(gold_chap - pred_chap),
        "hallucinated_codes": hallucinated,
        "gold_codes": sorted(c.normalized for c in record.gold_codes),
        "gold_diagnosis": record.gold_diagnosis_text,
    }


def create_app(settings: ServiceSettings,
               assistant_backend=None,
               physician_backend=None,
               records: Optional[list[ClinicalRecord]] = None) -> FastAPI:
    """Build the service; backends are injectable so tests can script them."""
    app = FastAPI(title="wardround session service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(settings.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    if records is None:
        if not settings.records_path:
            raise ValueError("service needs a record store path or preloaded records")
        records = load_store(settings.records_path)
    records_by_id = {r.record_id: r for r in records}
    chapter_table = (ChapterTable.from_csv(settings.chapter_table_path)
                     if settings.chapter_table_path else default_chapter_table())
    code_table = (CodeTable.from_csv(settings.code_table_path)
                  if settings.code_table_path else None)

    sessions: dict[str, SessionRuntime] = {}
    sessions_guard = threading.Lock()
    sessions_dir = Path(settings.sessions_dir)

    state = {"assistant": assistant_backend, "physician": physician_backend}
    app.state.wardround = state

    def _session_or_404(session_id: str) -> SessionRuntime:
        with sessions_guard:
            runtime = sessions.get(session_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return runtime

    def _index(runtime: SessionRuntime) -> None:
        sessions_dir.mkdir(parents=True, exist_ok=True)
        with open(sessions_dir / "index.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "session_id": runtime.session_id,
                "record_id": runtime.record.record_id,
                "case": runtime.case.value,
                "status": runtime.status,
            }, sort_keys=True) + "\n")

    def _session_view(runtime: SessionRuntime) -> dict:
        view = {
            "session_id": runtime.session_id,
            "record_id": runtime.record.record_id,
            "case": runtime.case.value,
            "status": runtime.status,
            "chief_complaint": runtime.record.chief_complaint,
            "turn_count": len(runtime.turns),
            "turns": [_turn_view(t) for t in runtime.turns],
            "pending_reply": runtime.pending_reply,
        }
        if runtime.status == "discharged" and runtime.score is not None:
            view["score"] = runtime.score
        return view

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "records": len(records_by_id)}

    @app.get("/records")
    def list_records() -> list[dict]:
        return [{"record_id": r.record_id, "chief_complaint": r.chief_complaint}
                for r in records]

    @app.post("/sessions")
    def create_session(body: CreateSessionBody) -> dict:
        try:
            case = RunCase(body.case)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"invalid case: {body.case}")
        if case not in (RunCase.HUMAN_IN_LOOP, RunCase.TWO_AGENT):
            raise HTTPException(status_code=400, detail=f"case not served here: {case.value}")
        record = records_by_id.get(body.record_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown record")

        session_id = uuid.uuid4().hex
        path = sessions_dir / f"{session_id}.jsonl"

        if case is RunCase.TWO_AGENT:
            if state["physician"] is None or state["assistant"] is None:
                raise HTTPException(status_code=503,
                                    detail="two-agent simulation needs both backends configured")
            dialogue = run_dialogue(case, record, state["physician"], state["assistant"],
                                    DialogueConfig(settings.max_turns, settings.max_nudges))
            runtime = SessionRuntime(session_id=session_id, record=record, case=case,
                                     assistant_system=None, path=path)
            runtime.turns = dialogue.turns
            runtime.status = "discharged" if dialogue.discharged else "failed"
            if dialogue.discharged and dialogue.discharge is not None:
                runtime.score = build_scorecard(record, dialogue.discharge.diagnosis,
                                                dialogue.discharge.codes_raw,
                                                chapter_table, code_table)
            _persist(runtime, {"kind": "meta", "session_id": session_id,
                               "record_id": record.record_id, "case": case.value})
            for turn in runtime.turns:
                _persist(runtime, {"kind": "turn", **_turn_view(turn)})
            _persist(runtime, {"kind": "outcome", "status": runtime.status,
                               "score": runtime.score})
        else:
            _, assistant_system = build_prompts(case, record)
            runtime = SessionRuntime(session_id=session_id, record=record, case=case,
                                     assistant_system=assistant_system, path=path)
            _persist(runtime, {"kind": "meta", "session_id": session_id,
                               "record_id": record.record_id, "case": case.value})

        with sessions_guard:
            sessions[session_id] = runtime
        _index(runtime)
        return _session_view(runtime)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return _session_view(_session_or_404(session_id))

    @app.post("/sessions/{session_id}/message")
    def post_message(session_id: str, body: MessageBody, request: Request):
        runtime = _session_or_404(session_id)
        if runtime.case is not RunCase.HUMAN_IN_LOOP:
            raise HTTPException(status_code=400, detail="messages only apply to human sessions")
        assistant = state["assistant"]
        if assistant is None:
            raise HTTPException(status_code=503, detail="no assistant backend configured")
        if not runtime.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="a reply is already in flight")

        acquired = True
        try:
            if runtime.status != "open":
                raise HTTPException(status_code=409, detail=f"session is {runtime.status}")
            text = (body.text or "").strip()
            if runtime.pending_reply:
                if text:
                    raise HTTPException(status_code=409,
                                        detail="previous message unanswered; retry with empty text")
            else:
                if not text:
                    raise HTTPException(status_code=422, detail="message text must be non-empty")
                turn = runtime.append_turn(Role.CHIEF_PHYSICIAN, text)
                runtime.pending_reply = True
                _persist(runtime, {"kind": "turn", **_turn_view(turn)})

            runtime.status = "awaiting_assistant"
            view = runtime.assistant_view()
            stream = request.query_params.get("stream", "true").lower() != "false"

            if not stream:
                try:
                    reply = assistant.chat(view)
                except BackendError as exc:
                    runtime.status = "open"
                    raise HTTPException(status_code=502,
                                        detail=f"assistant backend failed: {exc}")
                turn = runtime.append_turn(Role.ASSISTANT, reply.content)
                runtime.pending_reply = False
                runtime.status = "open"
                _persist(runtime, {"kind": "turn", **_turn_view(turn)})
                return JSONResponse({"turn": _turn_view(turn),
                                     "turn_count": len(runtime.turns)})

            def event_stream():
                chunks: list[str] = []
                try:
                    try:
                        for chunk in assistant.chat_stream(view):
                            chunks.append(chunk)
                            yield f"event: token\ndata: {json.dumps(chunk)}\n\n"
                    except Exception as exc:  # partial content discarded
                        runtime.status = "open"
                        yield f"event: error\ndata: {json.dumps(str(exc))}\n\n"
                        return
                    content = "".join(chunks)
                    turn = runtime.append_turn(Role.ASSISTANT, content)
                    runtime.pending_reply = False
                    runtime.status = "open"
                    _persist(runtime, {"kind": "turn", **_turn_view(turn)})
                    done = {"turn": _turn_view(turn), "turn_count": len(runtime.turns)}
                    yield f"event: done\ndata: {json.dumps(done, ensure_ascii=False)}\n\n"
                finally:
                    runtime.lock.release()

            acquired = False  # released by the generator
            return StreamingResponse(event_stream(), media_type="text/event-stream")
        finally:
            if acquired:
                runtime.lock.release()

    @app.post("/sessions/{session_id}/discharge")
    def submit_discharge(session_id: str, body: DischargeBody) -> dict:
        runtime = _session_or_404(session_id)
        if runtime.case is not RunCase.HUMAN_IN_LOOP:
            raise HTTPException(status_code=400, detail="discharge only applies to human sessions")
        if not runtime.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="a reply is already in flight")
        try:
            if runtime.status != "open":
                raise HTTPException(status_code=409, detail=f"session is {runtime.status}")
            if runtime.pending_reply:
                raise HTTPException(status_code=409, detail="previous message unanswered")
            diagnosis = body.diagnosis.strip()
            codes = body.codes.replace("[", "").replace("]", "").strip()
            if not diagnosis or not codes:
                raise HTTPException(status_code=422,
                                    detail="diagnosis and codes must be non-empty")
            turn = runtime.append_turn(
                Role.CHIEF_PHYSICIAN,
                render_tool_call(TOOL_DIALOGUE, diagnosis, codes),
                is_tool_call=True,
            )
            runtime.score = build_scorecard(runtime.record, diagnosis, codes,
                                            chapter_table, code_table)
            runtime.status = "discharged"
            _persist(runtime, {"kind": "turn", **_turn_view(turn)})
            _persist(runtime, {"kind": "outcome", "status": "discharged",
                               "score": runtime.score})
            _index(runtime)
            return {"session_id": runtime.session_id, "status": runtime.status,
                    "turn_count": len(runtime.turns), "score": runtime.score}
        finally:
            runtime.lock.release()

    @app.get("/reports/{run_id}")
    def get_report(run_id: str) -> dict:
        if not re.fullmatch(r"[A-Za-z0-9._\-]+", run_id):
            raise HTTPException(status_code=400, detail="bad run id")
        run_dir = Path(settings.runs_root) / run_id
        try:
            reports = aggregate_run_dirs([run_dir])
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail="no such run")
        return report_to_json(reports)

    if settings.static_dir and Path(settings.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=settings.static_dir, html=True), name="ui")

    return app


def replay_scorecard(session_path: str | Path, records_by_id: dict[str, ClinicalRecord],
                     chapter_table: Optional[ChapterTable] = None,
                     code_table: Optional[CodeTable] = None) -> Optional[dict]:
    """Recompute the scorecard from a persisted session file.

    Returns None when the session never discharged.  Used to verify that
    replaying a transcript reproduces the stored score.
    """
    chapter_table = chapter_table or default_chapter_table()
    record_id = None
    tool_turn = None
    with open(session_path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            if obj.get("kind") == "meta":
                record_id = obj["record_id"]
            elif obj.get("kind") == "turn" and obj.get("is_tool_call"):
                tool_turn = obj
    if record_id is None or tool_turn is None:
        return None
    from .orchestrator import extract_tool_call
    discharge = extract_tool_call(tool_turn["content"], TOOL_DIALOGUE)
    if discharge is None:
        return None
    record = records_by_id[record_id]
    return build_scorecard(record, discharge.diagnosis, discharge.codes_raw,
                           chapter_table, code_table)
