import json

import pytest
from hypothesis import given, strategies as st

from patientgraph.clients import ChatClient, FunctionChatBackend, RateLimitError, AuthError
from patientgraph.inference import (
    GenerationError,
    GenerationRequest,
    RecommendationResult,
    assemble_prompt,
    generate,
    parse_medications,
    render_prompt_block,
    result_line,
)
from patientgraph.prompts import Prompt, PromptKind
from patientgraph.templates import TemplateError

CANDS = ("Aspirin", "Loratadine", "Montmorillonite Powder", "Omeprazole")
SMALL = "C:[Context]|G:[Graph]|N:[NP]|P:[PP]|M:[Medication]"


def chat(fn):
    return ChatClient(FunctionChatBackend(fn))


def test_assemble_golden():
    req = GenerationRequest("Patient: cough", "patient has_symptom cough", "- a", "- b", ("X", "Y"), template=SMALL)
    assert assemble_prompt(req) == "C:Patient: cough|G:patient has_symptom cough|N:- a|P:- b|M:X, Y"


def test_shipped_template_has_sections():
    req = GenerationRequest("Patient: cough", "patient has_symptom cough", "- a", "- b", CANDS)
    out = assemble_prompt(req)
    for header in ("Patient-centric graph:\npatient has_symptom cough", "Neighborhood prompts:\n- a",
                   "Path-based prompts:\n- b", "Dialogue context:\nPatient: cough"):
        assert header in out
    assert "Aspirin, Loratadine" in out


def test_missing_graph_placeholder_is_fatal():
    req = GenerationRequest("ctx", "some graph", template="[Context] [Medication]", candidate_medications=("A",))
    with pytest.raises(TemplateError, match=r"\[Graph\]"):
        assemble_prompt(req)


def test_empty_blocks_may_drop_placeholders():
    req = GenerationRequest("ctx", template="[Context] / [Medication]", candidate_medications=("A",))
    assert assemble_prompt(req) == "ctx / A"


def test_render_block():
    ps = [Prompt(PromptKind.LLM_REASONING, "one", (("a", "b", "c"),)), Prompt(PromptKind.WEB_SEARCH, "two", ())]
    assert render_prompt_block(ps) == "- one\n- two"


def test_parse_examples():
    assert parse_medications("Take Aspirin, aspirin again.", CANDS) == {"Aspirin"}
    assert parse_medications("Try loratadine tablets.", CANDS, {"loratadine tablets": "Loratadine"}) == {"Loratadine"}
    assert parse_medications("Montmorillonite Powder and omeprazole", CANDS) == {"Montmorillonite Powder", "Omeprazole"}
    assert parse_medications("Aspirinol is not a candidate", CANDS) == set()
    assert parse_medications("smecta", CANDS, {"smecta": "Montmorillonite Powder", "zz": "Unknown"}) == {"Montmorillonite Powder"}


def test_longest_surface_consumes_span():
    cands = ("Powder", "Montmorillonite Powder")
    assert parse_medications("use Montmorillonite Powder", cands) == {"Montmorillonite Powder"}


@given(st.lists(st.sampled_from(CANDS), max_size=4), st.sampled_from([str.lower, str.upper, str.title, lambda s: s]))
def test_parse_case_invariant(names, case):
    text = "I suggest " + " and ".join(names) + "."
    assert parse_medications(case(text), CANDS) == parse_medications(text, CANDS) == set(names)


def req(cands=CANDS, template="recommend"):
    return GenerationRequest("Patient: diarrhea", "patient has_symptom diarrhea", "", "", cands, template=template)


def test_generate_parses():
    res = generate(chat(lambda p: "I recommend Montmorillonite Powder."), req())
    assert res.medications == {"Montmorillonite Powder"} and res.warnings == []


def test_generate_non_candidate_warns():
    res = generate(chat(lambda p: "Try Ibuprofen."), req())
    assert res.medications == set() and res.warnings == ["no candidate medication found in response"]


def test_interview_passthrough():
    r = GenerationRequest("Patient: cough", "patient has_symptom cough", template="interview")
    res = generate(chat(lambda p: "How long have you had the cough?"), r)
    assert r.task == "interview" and res.response_text == "How long have you had the cough?" and not res.medications


def test_empty_completion_raises():
    with pytest.raises(GenerationError):
        generate(chat(lambda p: "   "), req())


def test_retry_then_fail():
    calls = []

    def flaky(p):
        calls.append(p)
        if len(calls) == 1:
            raise RateLimitError("busy")
        return "Aspirin"

    assert generate(chat(flaky), req(), sleep=lambda s: None).medications == {"Aspirin"}

    def denied(p):
        raise AuthError("bad token")

    with pytest.raises(GenerationError, match="bad token"):
        generate(chat(denied), req(), sleep=lambda s: None)


def test_result_lines():
    ok = json.loads(result_line("d1", RecommendationResult("x", {"B", "A"})))
    assert ok == {"id": "d1", "response": "x", "medications": ["A", "B"], "warnings": []}
    bad = json.loads(result_line("d2", None, "boom"))
    assert bad["response"] is None and bad["error"] == "boom" and bad["medications"] == []
