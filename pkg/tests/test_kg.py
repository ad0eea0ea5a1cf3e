import io

import pytest
from hypothesis import given, strategies as st

from oracles import neighborhood_scan
from patientgraph.kg import (
    EntityType,
    KGFormatError,
    KGSchemaError,
    KnowledgeGraph,
    Triple,
    attribute_facts,
    load_kg,
    neighborhood,
    parse_triples,
)

NAMES = ["a", "b", "c", "d", "e", "f"]
RELS = ["r1", "r2", "r3"]
triples_st = st.frozensets(st.tuples(st.sampled_from(NAMES), st.sampled_from(RELS), st.sampled_from(NAMES)), max_size=50)


def test_toy_kg_loads(toy_kg):
    assert Triple("cold", "drug_treatment", "Aspirin") in toy_kg.triples
    assert toy_kg.type_of("Losartan") is EntityType.MEDICATION
    assert toy_kg.resolve_synonym("流感") == "influenza"
    assert toy_kg.resolve_exact("ASPIRIN") == "Aspirin"
    assert toy_kg.audit()
    assert not toy_kg.dangling_synonyms


def test_attribute_facts(toy_kg):
    assert attribute_facts(toy_kg, "Losartan", "contraindication") == {"pregnancy"}
    assert attribute_facts(toy_kg, "Aspirin", "contraindication") == set()


def test_duplicate_lines_collapse_and_stats():
    kg, stats = load_kg(io.StringIO("a\tr\tb\na\tr\tb\n# note\n\nb\tr\tc\n"))
    assert stats.triples == 2 and stats.relations == 1


@pytest.mark.parametrize("text,line", [("a\tr\n", 1), ("ok\tr\tx\n\ta\tb\n", 2)])
def test_triple_errors_are_positioned(text, line):
    with pytest.raises(KGFormatError) as exc:
        parse_triples(io.StringIO(text))
    assert exc.value.line == line


def test_conflicting_types_rejected():
    with pytest.raises(KGSchemaError):
        load_kg(io.StringIO("a\tr\tb\n"), None, io.StringIO('{"a": "Disease", "a": "Medication"}'))


def test_unknown_type_rejected():
    with pytest.raises(KGSchemaError):
        load_kg(io.StringIO("a\tr\tb\n"), None, io.StringIO('{"a": "Planet"}'))


def test_literal_tails():
    kg = KnowledgeGraph({("gastritis", "dietary_advice", "avoid spicy food")}, {"gastritis": "Disease"})
    assert kg.is_literal("avoid spicy food")
    assert "avoid spicy food" not in kg.entities()


def test_neighborhood_example(toy_kg):
    n = neighborhood(toy_kg, {"cold"})
    assert set(n.pairs()) == {("drug_treatment", "Aspirin"), ("drug_treatment", "Berberine")}
    assert neighborhood(toy_kg, set()) == neighborhood(toy_kg, {"not in kg"})
    inc = neighborhood(toy_kg, {"pregnancy"}, include_incoming=True)
    assert ("contraindication", "Losartan") in inc


@given(triples_st, st.frozensets(st.sampled_from(NAMES)))
def test_neighborhood_matches_scan(triples, subset):
    kg = KnowledgeGraph(triples)
    n = neighborhood(kg, subset)
    assert {k: set(v) for k, v in n.items()} == neighborhood_scan(triples, subset)


@given(triples_st, st.frozensets(st.sampled_from(NAMES)), st.frozensets(st.sampled_from(NAMES)))
def test_neighborhood_union_and_monotone(triples, a, b):
    kg = KnowledgeGraph(triples)
    assert neighborhood(kg, a | b) == neighborhood(kg, a) | neighborhood(kg, b)
    assert neighborhood(kg, a).pairs() <= neighborhood(kg, a | b).pairs()
