import json

import pytest
from hypothesis import given, strategies as st

from patientgraph.clients import ChatClient, FunctionChatBackend
from patientgraph.dialogue import Dialogue
from patientgraph.extraction import (
    Category,
    ConceptMention,
    ExtractionError,
    ExtractionFormatError,
    LexiconExtractor,
    LLMExtractor,
    SLOT_SCHEMAS,
    SlotValue,
    extract_concepts,
    extract_patient_characteristics,
    fill_slots,
    find_surface,
    parse_json_output,
    parse_list_output,
    validate_slot_value,
)
from patientgraph.templates import data_path


@pytest.fixture(scope="module")
def lex():
    return LexiconExtractor.from_file(data_path("toy_kg", "lexicon.json"))


def slots(svs):
    return {s.slot: s.value for s in svs}


def test_concepts_and_negation(lex):
    d = Dialogue.from_pairs("x", [("patient", "I have a cough and no fever.")])
    cs = extract_concepts(lex, d, 0)
    assert [(c.surface, c.category) for c in cs] == [("cough", Category.SYMPTOM), ("fever", Category.SYMPTOM)]
    assert slots(fill_slots(lex, d, cs[0], 1))["state"] == "patient claims positive"
    assert slots(fill_slots(lex, d, cs[1], 1))["state"] == "patient claims negative"


def test_spans_point_at_surface(lex):
    text = "流感 and high blood pressure"
    d = Dialogue.from_pairs("x", [("patient", text)])
    for c in extract_concepts(lex, d, 0):
        a, b = c.char_span
        assert text[a:b] == c.surface
    names = {c.name for c in extract_concepts(lex, d, 0)}
    assert names == {"influenza", "hypertension"}


def test_longest_match_wins(lex):
    d = Dialogue.from_pairs("x", [("patient", "I use loratadine tablets daily.")])
    (c,) = extract_concepts(lex, d, 0)
    assert c.surface == "loratadine tablets" and c.name == "Loratadine"


def test_doctor_turn_rejected(lex):
    d = Dialogue.from_pairs("x", [("patient", "cough"), ("doctor", "fever?")])
    with pytest.raises(ValueError):
        extract_concepts(lex, d, 1)


def test_question_answered_yes_is_a_claim(lex):
    d = Dialogue.from_pairs("x", [("patient", "I have a cough."), ("doctor", "Any fever?"), ("patient", "Yes, fever too.")])
    c = [c for c in extract_concepts(lex, d, 2) if c.surface == "fever"][0]
    assert slots(fill_slots(lex, d, c, 1))["state"] == "patient claims positive"


def test_medication_slots(lex):
    d = Dialogue.from_pairs("x", [("patient", "I took Aspirin but it didn't help.")])
    (c,) = extract_concepts(lex, d, 0)
    assert slots(fill_slots(lex, d, c, 1)) == {
        "whether_taken": "yes", "whether_effective": "no", "whether_doctor_recommend": "unknown"}


def test_history_cue(lex):
    d = Dialogue.from_pairs("x", [("patient", "I used to have gastritis years ago.")])
    (c,) = extract_concepts(lex, d, 0)
    assert slots(fill_slots(lex, d, c, 1))["past_medical_history"] == "yes"


def test_slot_output_respects_schema_and_window(lex):
    d = Dialogue.from_pairs("x", [("patient", "cough"), ("doctor", "ok"), ("patient", "also itching"),
                                  ("doctor", "ok"), ("patient", "and diarrhea")])
    for m in d.patient_turns():
        for c in extract_concepts(lex, d, m):
            for k in (0, 1, None):
                out = fill_slots(lex, d, c, k)
                assert [s.slot for s in out] == [s for s in SLOT_SCHEMAS[c.category] if s in {x.slot for x in out}]
                for s in out:
                    validate_slot_value(s)
                    if k is not None:
                        assert all(abs(t - m) <= 2 * k for t in s.evidence_turns)


def test_characteristics(lex):
    d = Dialogue.from_pairs("y", [("patient", "I'm a 32-year-old woman and pregnant."), ("doctor", "ok"),
                                  ("patient", "My blood pressure is 130/85.")])
    got = {s.slot: s.value for s in extract_patient_characteristics(lex, d)}
    assert got == {"age": "32", "gender": "female", "pregnant": "yes", "blood_pressure": "130/85"}


def test_not_pregnant(lex):
    d = Dialogue.from_pairs("y", [("patient", "No, I'm not pregnant.")])
    assert {s.slot: s.value for s in extract_patient_characteristics(lex, d)}["pregnant"] == "no"


def test_latest_characteristic_wins(lex):
    d = Dialogue.from_pairs("y", [("patient", "I'm 30 years old."), ("doctor", "sure?"), ("patient", "Sorry, I am 31")])
    assert {s.slot: s.value for s in extract_patient_characteristics(lex, d)}["age"] == "31"


def test_validate_rejects_out_of_vocabulary():
    c = ConceptMention("cough", Category.SYMPTOM, 0)
    with pytest.raises(ExtractionFormatError):
        validate_slot_value(SlotValue(c, "state", "maybe"))
    with pytest.raises(ExtractionFormatError):
        validate_slot_value(SlotValue(c, "whether_taken", "yes"))
    with pytest.raises(ExtractionFormatError):
        validate_slot_value(SlotValue(None, "height", "180"))


def test_parsers_are_lenient_but_bounded():
    assert parse_list_output('Here: ["a", "b"].') == ["a", "b"]
    assert parse_list_output("['a', 'b']") == ["a", "b"]
    assert parse_json_output('answer: {"x": 1} done') == {"x": 1}
    with pytest.raises(ExtractionFormatError):
        parse_list_output("no list here")
    with pytest.raises(ExtractionFormatError):
        parse_json_output("nothing")


@given(st.text(alphabet="abc xyz", max_size=30), st.sampled_from(["ab", "xyz", "c"]))
def test_find_surface_is_first_whole_word_hit(text, surface):
    def whole_word(i):
        j = i + len(surface)
        return (i == 0 or not text[i - 1].isalnum()) and (j == len(text) or not text[j].isalnum())

    hits = [i for i in range(len(text)) if text.lower().startswith(surface, i) and whole_word(i)]
    assert find_surface(text, surface) == (hits[0] if hits else -1)


def scripted(responses):
    """A chat backend answering by template: responses keyed by a phrase the prompt contains."""

    def answer(prompt):
        for key, value in responses.items():
            if key in prompt:
                return value if isinstance(value, str) else json.dumps(value)
        return "[]"

    return ChatClient(FunctionChatBackend(answer))


def test_llm_extractor_round_trip():
    client = scripted({
        "category Symptom": ["itching"],
        'condition "itching"': {"main-state": "patient-positive", "past medical history": "no",
                                "other relevant information": ["for a week"]},
        "personal characteristics": {"gender": "female", "age": "unknown", "pregnant": "yes"},
    })
    ex = LLMExtractor(client)
    d = Dialogue.from_pairs("x", [("patient", "My skin has been itching for a week, I'm pregnant.")])
    cs = extract_concepts(ex, d, 0)
    assert [(c.surface, c.category) for c in cs] == [("itching", Category.SYMPTOM)]
    got = slots(fill_slots(ex, d, cs[0], 1))
    assert got == {"state": "patient claims positive", "past_medical_history": "no", "memory": "for a week"}
    chars = {s.slot: s.value for s in extract_patient_characteristics(ex, d)}
    assert chars == {"gender": "female", "pregnant": "yes"}


def test_llm_extractor_bad_vocabulary():
    client = scripted({"category Symptom": ["itching"], 'condition "itching"': {"main-state": "very bad"}})
    ex = LLMExtractor(client)
    d = Dialogue.from_pairs("x", [("patient", "itching")])
    (c,) = extract_concepts(ex, d, 0)
    with pytest.raises(ExtractionError):
        fill_slots(ex, d, c, 1)
