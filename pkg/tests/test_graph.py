import json
import random

import pytest
from hypothesis import given, strategies as st

import gen
from patientgraph.extraction import Category, ConceptMention, SlotValue
from patientgraph.graph import (
    LinkMethod,
    PatientGraph,
    attach_neighborhood,
    levenshtein,
    link_mention,
    linearize,
    similarity,
    upsert_characteristics,
    upsert_concept,
)


def lev_oracle(a, b):
    # plain recursion with memo; independent of the row-based DP
    from functools import lru_cache

    @lru_cache(None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return go(len(a), len(b))


@given(st.text(alphabet="abcd", max_size=8), st.text(alphabet="abcd", max_size=8))
def test_levenshtein_oracle(a, b):
    assert levenshtein(a, b) == lev_oracle(a, b) == levenshtein(b, a)


def test_link_methods(toy_kg):
    assert link_mention(toy_kg, "Aspirin").method is LinkMethod.EXACT
    syn = link_mention(toy_kg, "流感", Category.DISEASE)
    assert (syn.candidate, syn.method) == ("influenza", LinkMethod.SYNONYM)
    typo = link_mention(toy_kg, "Loratadin", Category.MEDICATION)
    assert typo.candidate == "Loratadine" and typo.accepted and typo.method is LinkMethod.EDIT_DISTANCE
    far = link_mention(toy_kg, "headache", Category.SYMPTOM)
    assert not far.accepted


def test_link_respects_type_gate(toy_kg):
    # a medication mention never links to a disease even when spelled closely
    d = link_mention(toy_kg, "colds", Category.MEDICATION)
    assert d.candidate != "cold"


def test_similarity_bounds():
    assert similarity("", "") == 1.0
    assert similarity("abc", "ABC") == 1.0
    assert 0 <= similarity("abc", "xyz") <= 1


def _cough(turn=0):
    return ConceptMention("cough", Category.SYMPTOM, turn)


def test_upsert_builds_edges_and_provenance():
    g = PatientGraph()
    c = _cough()
    upsert_concept(g, c, [SlotValue(c, "state", "patient claims positive", frozenset({0}))])
    assert ("patient", "has_symptom", "cough") in g.edges
    assert ("cough", "state", "patient claims positive") in g.edges
    assert g.provenance[("patient", "has_symptom", "cough")] == frozenset({0})
    assert g.version == 1


def test_later_evidence_supersedes():
    g = PatientGraph()
    c = _cough()
    upsert_concept(g, c, [SlotValue(c, "state", "patient claims positive", frozenset({0}))])
    upsert_concept(g, c, [SlotValue(c, "state", "patient claims negative", frozenset({4}))])
    assert g.slot("cough", "state") == "patient claims negative"
    assert ("cough", "state", "patient claims positive") in g.provenance
    assert "cough" in g.negative_concepts()


def test_linked_node_uses_kg_name(toy_kg):
    g = PatientGraph()
    c = ConceptMention("流感", Category.DISEASE, 0)
    upsert_concept(g, c, [], link_mention(toy_kg, c.surface, c.category))
    assert "influenza" in g.concept_nodes and g.concept_nodes["influenza"].linked
    assert attach_neighborhood(g, toy_kg).pairs() == {("drug_treatment", "Oseltamivir")}


def test_unlinked_nodes_never_seed_retrieval(toy_kg):
    g = PatientGraph()
    upsert_concept(g, ConceptMention("cold", Category.DISEASE, 0), [])
    assert len(attach_neighborhood(g, toy_kg)) == 0


def test_characteristics_on_patient_node():
    g = upsert_characteristics(PatientGraph(), [SlotValue(None, "pregnant", "yes", frozenset({1}))])
    assert ("patient", "pregnant", "yes") in g.edges
    with pytest.raises(ValueError):
        upsert_characteristics(g, [SlotValue(_cough(), "state", "unknown")])


def test_json_round_trip(rng):
    g = gen.random_graph(rng, 10)
    back = PatientGraph.from_dict(json.loads(g.to_json()))
    assert back.same_content(g) and back.version == g.version


def test_linearize_order():
    g = PatientGraph()
    c = _cough()
    upsert_concept(g, c, [SlotValue(c, "state", "unknown")])
    upsert_characteristics(g, [SlotValue(None, "age", "30", frozenset({0}))])
    assert linearize(g).splitlines() == ["patient age 30", "patient has_symptom cough", "cough state unknown"]


@given(st.integers(0, 10_000))
def test_linearize_injective_on_spaceless_names(seed):
    rng = random.Random(seed)
    a, b = gen.random_graph(rng, 5), gen.random_graph(rng, 5)
    if frozenset(a.edges) != frozenset(b.edges):
        assert linearize(a) != linearize(b)
    else:
        assert linearize(a) == linearize(b)


@given(st.integers(0, 10_000))
def test_replay_is_idempotent_and_order_free(seed):
    rng = random.Random(seed)
    ops = gen.random_batch(rng, rng.randint(1, 12))
    g = PatientGraph()
    versions = []
    for op in ops:
        before = g.content()
        gen.apply(g, op)
        prev = versions[-1] if versions else 0
        versions.append(g.version)
        assert g.version == prev + (g.content() != before)
    frozen = (g.content(), g.version)
    for op in ops:
        gen.apply(g, op)
    assert (g.content(), g.version) == frozen
    shuffled = ops[:]
    rng.shuffle(shuffled)
    h = PatientGraph()
    for op in shuffled:
        gen.apply(h, op)
    assert h.same_content(g)
