import json

import pytest

from wardround.llm import scripted_mock
from wardround.orchestrator import (DialogueConfig, FailureReason, LeakageError, Role,
                                    RunCase, TOOL_BASELINE, TOOL_DIALOGUE, build_prompts,
                                    contains_gold, expected_tool_for, extract_tool_call,
                                    load_template, looks_like_tool_attempt,
                                    render_tool_call, run_dialogue)


def tool_msg(diagnosis="Community acquired pneumonia", codes="J18.9, R05.9",
             tool=TOOL_DIALOGUE):
    return "Based on our discussion:\n" + render_tool_call(tool, diagnosis, codes)


# ---------------------------------------------------------------- prompts

def test_templates_load_and_have_placeholder():
    for name in ("baseline", "chief_physician", "physician_assistant"):
        text = load_template(name)
        assert "{clinicalNote}" in text


def test_baseline_complaint_prompt_has_only_complaint(synthetic_records):
    record = synthetic_records[0]
    physician, assistant = build_prompts(RunCase.BASELINE_COMPLAINT, record)
    assert assistant is None
    assert record.chief_complaint in physician
    # nothing else from the note
    hpi = record.sections.body_of("history of present illness")
    assert hpi.split(".")[0] not in physician


def test_two_agent_prompts_split_views(synthetic_records):
    record = synthetic_records[0]
    physician, assistant = build_prompts(RunCase.TWO_AGENT, record)
    assert assistant is not None
    hpi = record.sections.body_of("history of present illness")
    assert hpi in assistant
    assert hpi not in physician
    assert record.chief_complaint in physician
    assert "Dr. Lee" in physician
    assert "Dr. Ellis" in assistant


def test_full_note_baseline_gets_note_without_answers(synthetic_records):
    record = synthetic_records[0]
    physician, assistant = build_prompts(RunCase.BASELINE_FULL_NOTE, record)
    assert assistant is None
    assert record.sections.body_of("pertinent results") in physician
    assert not contains_gold(physician, record)


def test_no_prompt_leaks_gold_for_any_case(synthetic_records):
    for record in synthetic_records:
        for case in (RunCase.BASELINE_COMPLAINT, RunCase.BASELINE_FULL_NOTE,
                     RunCase.TWO_AGENT, RunCase.HUMAN_IN_LOOP):
            for prompt in build_prompts(case, record):
                if prompt:
                    assert not contains_gold(prompt, record)


# ---------------------------------------------------------------- extraction

def test_extract_tool_call_inline():
    discharge = extract_tool_call(
        'prose before {"tool": "discharge_text_tool", "diagnosis": "Ludwig\'s angina", '
        '"codes": "K12.2"} prose after', TOOL_DIALOGUE)
    assert discharge is not None
    assert discharge.diagnosis == "Ludwig's angina"
    assert [c.normalized for c in discharge.codes] == ["K122"]


def test_extract_tool_call_fenced():
    message = "Final answer.\n```json\n" + json.dumps({
        "tool": "discharge_text_tool", "diagnosis": "GERD", "codes": "K21.9"}) + "\n```"
    discharge = extract_tool_call(message, TOOL_DIALOGUE)
    assert discharge is not None
    assert discharge.codes_raw == "K21.9"


def test_extract_tool_call_absent_in_prose():
    assert extract_tool_call("I would like more information about the labs.",
                             TOOL_DIALOGUE) is None


def test_extract_tool_call_wrong_tool_name():
    assert extract_tool_call(tool_msg(tool=TOOL_BASELINE), TOOL_DIALOGUE) is None


def test_extract_tool_call_empty_fields_rejected():
    msg = json.dumps({"tool": TOOL_DIALOGUE, "diagnosis": "", "codes": "J18.9"})
    assert extract_tool_call(msg, TOOL_DIALOGUE) is None
    msg = json.dumps({"tool": TOOL_DIALOGUE, "diagnosis": "Pneumonia", "codes": "  "})
    assert extract_tool_call(msg, TOOL_DIALOGUE) is None


def test_extract_tool_call_list_codes_and_brackets():
    msg = json.dumps({"tool": TOOL_DIALOGUE, "diagnosis": "HTN", "codes": ["I10", "E78.5"]})
    discharge = extract_tool_call(msg, TOOL_DIALOGUE)
    assert discharge.codes_raw == "I10, E78.5"
    assert "[" not in discharge.codes_raw
    msg = json.dumps({"tool": TOOL_DIALOGUE, "diagnosis": "HTN", "codes": "[I10, E78.5]"})
    discharge = extract_tool_call(msg, TOOL_DIALOGUE)
    assert discharge.codes_raw == "I10, E78.5"


def test_extract_first_matching_object_wins():
    first = render_tool_call(TOOL_DIALOGUE, "first", "I10")
    second = render_tool_call(TOOL_DIALOGUE, "second", "E78.5")
    discharge = extract_tool_call(first + "\n" + second, TOOL_DIALOGUE)
    assert discharge.diagnosis == "first"


def test_looks_like_tool_attempt():
    assert looks_like_tool_attempt("I will now use discharge_text_tool.", TOOL_DIALOGUE)
    assert looks_like_tool_attempt('{"tool": "discharge_text_tool", "diagnosis": "x"}',
                                   TOOL_DIALOGUE)
    assert looks_like_tool_attempt('{"diagnosis": "x", "codes": "I10"}', TOOL_DIALOGUE)
    assert not looks_like_tool_attempt("What did the chest x-ray show?", TOOL_DIALOGUE)


def test_extraction_replay_is_byte_stable():
    message = tool_msg()
    first = extract_tool_call(message, TOOL_DIALOGUE)
    second = extract_tool_call(message, TOOL_DIALOGUE)
    assert first.to_dict() == second.to_dict()


# ---------------------------------------------------------------- dialogue

def test_baseline_discharges_in_one_turn(synthetic_records):
    record = synthetic_records[0]
    physician = scripted_mock([tool_msg(tool=TOOL_BASELINE)])
    session = run_dialogue(RunCase.BASELINE_COMPLAINT, record, physician)
    assert session.discharged
    assert session.turn_count == 1
    assert session.turns[0].is_tool_call
    assert session.nudge_count == 0


def test_two_agent_exchange_turn_count(synthetic_records):
    record = synthetic_records[1]
    k = 4
    phys_script = [f"Question {i}?" for i in range(1, k)] + [tool_msg()]
    asst_script = [f"Answer {i}." for i in range(1, k)] + ["Noted, I will finalize the chart."]
    session = run_dialogue(RunCase.TWO_AGENT, record,
                           scripted_mock(phys_script), scripted_mock(asst_script))
    assert session.discharged
    assert session.turn_count == 2 * k
    roles = [t.role for t in session.turns]
    assert roles == [Role.CHIEF_PHYSICIAN, Role.ASSISTANT] * k
    tool_turns = [t for t in session.turns if t.is_tool_call]
    assert len(tool_turns) == 1
    phys_turns = [t for t in session.turns if t.role is Role.CHIEF_PHYSICIAN]
    assert tool_turns[0] is phys_turns[-1]


def test_two_agent_strict_alternation(synthetic_records):
    record = synthetic_records[2]
    session = run_dialogue(
        RunCase.TWO_AGENT, record,
        scripted_mock(["q1", "q2", tool_msg()]),
        scripted_mock(["a1", "a2", "closing"]))
    for a, b in zip(session.turns, session.turns[1:]):
        assert a.role != b.role
    assert [t.index for t in session.turns] == list(range(1, session.turn_count + 1))


def test_max_turns_cap(synthetic_records):
    record = synthetic_records[3]
    physician = scripted_mock([f"more questions {i}" for i in range(30)])
    assistant = scripted_mock([f"more answers {i}" for i in range(30)])
    session = run_dialogue(RunCase.TWO_AGENT, record, physician, assistant,
                           DialogueConfig(max_turns=10))
    assert not session.discharged
    assert session.failure_reason is FailureReason.MAX_TURNS
    assert session.turn_count == 10


def test_nudge_recovers_malformed_tool_call(synthetic_records):
    record = synthetic_records[4]
    physician = scripted_mock([
        "q1",
        '{"tool": "discharge_text_tool", "diagnosis": "", "codes": "I10"}',
        tool_msg(),
    ])
    assistant = scripted_mock(["a1", "closing"])
    session = run_dialogue(RunCase.TWO_AGENT, record, physician, assistant)
    assert session.discharged
    assert session.nudge_count == 1
    assert session.turn_count == 4  # nudge and malformed attempt not counted
    kinds = [e.kind for e in session.events]
    assert kinds == ["turn", "turn", "attempt", "nudge", "turn", "turn"]


def test_retries_exhausted(synthetic_records):
    record = synthetic_records[5]
    bad = '{"tool": "discharge_text_tool", "diagnosis": "", "codes": ""}'
    physician = scripted_mock([bad, bad, bad])
    assistant = scripted_mock(["never used"])
    session = run_dialogue(RunCase.TWO_AGENT, record, physician, assistant,
                           DialogueConfig(max_nudges=2))
    assert not session.discharged
    assert session.failure_reason is FailureReason.TOOL_CALL_RETRIES_EXHAUSTED
    assert session.nudge_count == 2
    assert session.turn_count == 0


def test_baseline_nudge_keeps_single_turn(synthetic_records):
    record = synthetic_records[6]
    physician = scripted_mock(["Here is my answer without the tool.",
                               tool_msg(tool=TOOL_BASELINE)])
    session = run_dialogue(RunCase.BASELINE_COMPLAINT, record, physician)
    assert session.discharged
    assert session.turn_count == 1
    assert session.nudge_count == 1


def test_baseline_retries_exhausted(synthetic_records):
    record = synthetic_records[7]
    physician = scripted_mock(["prose"] * 3)
    session = run_dialogue(RunCase.BASELINE_FULL_NOTE, record, physician,
                           config=DialogueConfig(max_nudges=2))
    assert not session.discharged
    assert session.failure_reason is FailureReason.TOOL_CALL_RETRIES_EXHAUSTED


def test_backend_error_is_classified(synthetic_records):
    record = synthetic_records[8]

    class Exploding:
        model_id = "boom"

        def chat(self, messages):
            from wardround.llm import BackendError
            raise BackendError("down", status=503, attempts=3)

    session = run_dialogue(RunCase.BASELINE_COMPLAINT, record, Exploding())
    assert not session.discharged
    assert session.failure_reason is FailureReason.BACKEND_ERROR


def test_scripted_transcripts_are_reproducible(synthetic_records):
    record = synthetic_records[9]
    script_p = ["q1", tool_msg()]
    script_a = ["a1", "done"]
    s1 = run_dialogue(RunCase.TWO_AGENT, record, scripted_mock(script_p), scripted_mock(script_a))
    s2 = run_dialogue(RunCase.TWO_AGENT, record, scripted_mock(script_p), scripted_mock(script_a))
    e1 = [e.to_dict() for e in s1.events]
    e2 = [e.to_dict() for e in s2.events]
    assert json.dumps(e1, sort_keys=True) == json.dumps(e2, sort_keys=True)


def test_transcript_never_contains_gold(synthetic_records):
    for record in synthetic_records[:5]:
        session = run_dialogue(
            RunCase.TWO_AGENT, record,
            scripted_mock(["initial evaluation please", tool_msg("viral illness", "B34.9")]),
            scripted_mock(["structured summary", "acknowledged"]))
        for event in session.events:
            assert not contains_gold(event.content, record)


def test_dialogue_validation_errors(synthetic_records):
    record = synthetic_records[0]
    with pytest.raises(ValueError):
        run_dialogue(RunCase.TWO_AGENT, record, scripted_mock(["x"]))  # no assistant
    with pytest.raises(ValueError):
        run_dialogue(RunCase.BASELINE_COMPLAINT, record, scripted_mock(["x"]),
                     scripted_mock(["y"]))  # baseline with assistant
    with pytest.raises(ValueError):
        run_dialogue(RunCase.TWO_AGENT, record, scripted_mock(["x"]), scripted_mock(["y"]),
                     DialogueConfig(max_turns=1))
    with pytest.raises(ValueError):
        run_dialogue(RunCase.HUMAN_IN_LOOP, record, scripted_mock(["x"]))


def test_expected_tool_for_cases():
    assert expected_tool_for(RunCase.BASELINE_COMPLAINT) == TOOL_BASELINE
    assert expected_tool_for(RunCase.BASELINE_FULL_NOTE) == TOOL_BASELINE
    assert expected_tool_for(RunCase.TWO_AGENT) == TOOL_DIALOGUE
    assert expected_tool_for(RunCase.HUMAN_IN_LOOP) == TOOL_DIALOGUE


def test_leakage_guard_trips_on_poisoned_record(synthetic_records):
    import copy
    record = copy.deepcopy(synthetic_records[0])
    # force the gold diagnosis text into the chief complaint
    for section in record.sections.entries:
        if section.name == "chief complaint":
            section.body = record.gold_diagnosis_text
    with pytest.raises(LeakageError):
        run_dialogue(RunCase.BASELINE_COMPLAINT, record, scripted_mock(["x"]))


def test_extract_tool_call_nested_or_after_bad_braces():
    nested = json.dumps({"thoughts": "done",
                         "call": {"tool": TOOL_DIALOGUE, "diagnosis": "GERD", "codes": "K21.9"}})
    discharge = extract_tool_call(nested, TOOL_DIALOGUE)
    assert discharge is not None and discharge.diagnosis == "GERD"

    messy = "{oops " + render_tool_call(TOOL_DIALOGUE, "HTN", "I10") + " trailing}"
    discharge = extract_tool_call(messy, TOOL_DIALOGUE)
    assert discharge is not None and discharge.diagnosis == "HTN"
