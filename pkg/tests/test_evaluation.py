import json
from fractions import Fraction

import pytest
from hypothesis import assume, given, strategies as st

from oracles import set_metrics
from patientgraph.evaluation import (
    EvaluationError,
    ErrorTag,
    aggregate,
    diagnostic_score,
    evaluate_predictions,
    load_checklist,
    score_checklist,
    score_dialogue,
)

UNIVERSE = [f"m{i}" for i in range(8)]
sets = st.frozensets(st.sampled_from(UNIVERSE))


def test_worked_example():
    s = score_dialogue({"A", "B", "C"}, {"B", "C", "D"})
    assert (s.jaccard, s.precision, s.recall, s.f1) == (Fraction(1, 2), Fraction(2, 3), Fraction(2, 3), Fraction(2, 3))


def test_disjoint_and_empty_prediction():
    assert score_dialogue({"A"}, {"B"}).f1 == 0
    s = score_dialogue({"A"}, set())
    assert (s.jaccard, s.precision, s.recall, s.f1) == (0, 0, 0, 0)


def test_empty_gold():
    with pytest.raises(EvaluationError):
        score_dialogue(set(), {"A"})
    both = score_dialogue(set(), set(), strict=False)
    assert (both.jaccard, both.precision, both.recall, both.f1) == (1, 1, 1, 1)
    only_pred = score_dialogue(set(), {"A"}, strict=False)
    assert only_pred.f1 == 0 and only_pred.jaccard == 0


@given(sets, sets)
def test_matches_oracle(gold, pred):
    assume(gold)
    s = score_dialogue(gold, pred)
    assert (s.jaccard, s.precision, s.recall, s.f1) == set_metrics(gold, pred, UNIVERSE)


@given(sets, sets)
def test_ordering_and_symmetry(gold, pred):
    assume(gold and pred)
    s = score_dialogue(gold, pred)
    assert s.jaccard <= min(s.precision, s.recall) <= s.f1 <= max(s.precision, s.recall)
    t = score_dialogue(pred, gold)
    assert (t.jaccard, t.f1) == (s.jaccard, s.f1)
    assert (t.precision, t.recall) == (s.recall, s.precision)


@given(sets, sets, st.sampled_from(UNIVERSE))
def test_adding_a_correct_item_never_hurts(gold, pred, x):
    assume(gold)
    g = gold | {x}
    before, after = score_dialogue(g, pred), score_dialogue(g, pred | {x})
    assert after.jaccard >= before.jaccard and after.f1 >= before.f1 and after.recall >= before.recall


def test_aggregate_means():
    r = evaluate_predictions({"a": ["X"], "b": ["Y"]}, {"a": ["X"], "b": ["Z"]}, error_tags={"b": ["OverlookedFactors"]})
    assert r.count == 2 and r.mean_f1 == Fraction(1, 2) and r.mean_jaccard == Fraction(1, 2)
    assert r.error_tags == {"b": [ErrorTag.OVERLOOKED_FACTORS]}
    d = json.loads(r.to_json())
    assert d["mean_f1"] == 0.5 and [p["id"] for p in d["per_dialogue"]] == ["a", "b"]
    assert "mean" in r.table() and "dialogues: 2" in r.table()


def test_aggregate_errors():
    with pytest.raises(EvaluationError):
        aggregate([])
    with pytest.raises(EvaluationError, match="missing"):
        evaluate_predictions({"a": []}, {"a": ["X"], "b": ["Y"]})
    with pytest.raises(ValueError):
        aggregate([score_dialogue({"A"}, {"A"})], {"x": ["NotATag"]})


def test_diagnostic_weights():
    assert diagnostic_score(1, 2, 3, 4).score == Fraction(3, 10) * Fraction(1, 2) + Fraction(7, 10) * Fraction(3, 4)
    assert diagnostic_score(2, 2, 4, 4).score == 1
    assert diagnostic_score(0, 3, 0, 5).score == 0
    for bad in ((3, 2, 1, 1), (0, 0, 1, 1), (-1, 2, 1, 1)):
        with pytest.raises(ValueError):
            diagnostic_score(*bad)


def test_checklist(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"aspects": {"onset": True, "severity": False}, "information": {"fever": True}}))
    assert score_checklist(load_checklist(p)).score == Fraction(3, 20) + Fraction(7, 10)
    p.write_text("{}")
    with pytest.raises(EvaluationError):
        load_checklist(p)
