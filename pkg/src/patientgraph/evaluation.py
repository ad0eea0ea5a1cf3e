"""Set-overlap metrics for recommendations and the weighted diagnostic score."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

ASPECT_WEIGHT = Fraction(3, 10)
INFORMATION_WEIGHT = Fraction(7, 10)


class EvaluationError(ValueError):
    pass


class ErrorTag(str, enum.Enum):
    OVERLOOKED_FACTORS = "OverlookedFactors"
    LACK_MEDICATION_KNOWLEDGE = "LackMedicationKnowledge"
    OVERLOOKED_MAIN_SYMPTOM = "OverlookedMainSymptom"


@dataclass(frozen=True)
class DialogueScore:
    id: str
    gold: frozenset
    predicted: frozenset
    jaccard: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "gold": sorted(self.gold),
            "predicted": sorted(self.predicted),
            "jaccard": float(self.jaccard),
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
        }


def _ratio(num: int, den: int, empty: Fraction) -> Fraction:
    return Fraction(num, den) if den else empty


def score_dialogue(gold: Iterable[str], predicted: Iterable[str], strict: bool = True, id: str = "") -> DialogueScore:
    """Jaccard, precision, recall and F1 of one prediction set, as exact fractions.

    Strict mode rejects an empty gold set. In lenient mode empty versus empty
    scores 1 on every metric; a ratio with a zero denominator otherwise scores 0.
    """
    y, y_hat = frozenset(gold), frozenset(predicted)
    if strict and not y:
        raise EvaluationError(f"empty gold set for dialogue {id!r}")
    both_empty = not y and not y_hat
    one = Fraction(1) if both_empty else Fraction(0)
    inter = len(y & y_hat)
    jaccard = _ratio(inter, len(y | y_hat), one)
    precision = _ratio(inter, len(y_hat), one)
    recall = _ratio(inter, len(y), one)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return DialogueScore(id, y, y_hat, jaccard, precision, recall, f1)


@dataclass
class EvalReport:
    per_dialogue: list
    mean_jaccard: Fraction
    mean_f1: Fraction
    count: int
    error_tags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_jaccard": float(self.mean_jaccard),
            "mean_f1": float(self.mean_f1),
            "per_dialogue": [s.to_dict() for s in self.per_dialogue],
            "error_tags": {k: [t.value for t in v] for k, v in sorted(self.error_tags.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def table(self) -> str:
        width = max([len("id")] + [len(s.id) for s in self.per_dialogue])
        lines = [f"{'id':<{width}}  jaccard  precision  recall      f1"]
        for s in self.per_dialogue:
            lines.append(f"{s.id:<{width}}  {float(s.jaccard):7.4f}  {float(s.precision):9.4f}  {float(s.recall):6.4f}  {float(s.f1):6.4f}")
        lines.append(f"{'mean':<{width}}  {float(self.mean_jaccard):7.4f}  {'':9}  {'':6}  {float(self.mean_f1):6.4f}")
        lines.append(f"dialogues: {self.count}")
        return "\n".join(lines)


def aggregate(scores: Sequence[DialogueScore], error_tags: Optional[Mapping[str, Iterable]] = None) -> EvalReport:
    if not scores:
        raise EvaluationError("cannot aggregate zero dialogues")
    n = len(scores)
    tags = {k: [ErrorTag(t) for t in v] for k, v in (error_tags or {}).items()}
    return EvalReport(
        list(scores),
        sum((s.jaccard for s in scores), Fraction(0)) / n,
        sum((s.f1 for s in scores), Fraction(0)) / n,
        n,
        tags,
    )


def evaluate_predictions(predictions: Mapping[str, Iterable[str]], gold: Mapping[str, Iterable[str]], strict: bool = True,
                         error_tags: Optional[Mapping] = None) -> EvalReport:
    """Score predictions keyed by dialogue id against gold sets; ids must align exactly."""
    missing = sorted(set(gold) - set(predictions))
    extra = sorted(set(predictions) - set(gold))
    if missing or extra:
        raise EvaluationError(f"unmatched ids: missing predictions {missing}, unknown ids {extra}")
    scores = [score_dialogue(gold[i], predictions[i], strict, i) for i in gold]
    return aggregate(scores, error_tags)


@dataclass(frozen=True)
class DiagnosticScore:
    aspects: Fraction
    information: Fraction
    score: Fraction


def diagnostic_score(aspects_hits: int, aspects_total: int, info_hits: int, info_total: int) -> DiagnosticScore:
    for hits, total, what in ((aspects_hits, aspects_total, "aspects"), (info_hits, info_total, "information")):
        if total < 1:
            raise ValueError(f"{what} total must be >= 1")
        if not 0 <= hits <= total:
            raise ValueError(f"{what} hits must lie in [0, {total}], got {hits}")
    a = Fraction(aspects_hits, aspects_total)
    i = Fraction(info_hits, info_total)
    return DiagnosticScore(a, i, ASPECT_WEIGHT * a + INFORMATION_WEIGHT * i)


def load_checklist(path) -> dict:
    """Checklist JSON: ``{"aspects": {item: bool}, "information": {item: bool}}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        aspects, info = data["aspects"], data["information"]
    except (KeyError, TypeError):
        raise EvaluationError(f"{path}: checklist needs 'aspects' and 'information' maps") from None
    return {"aspects": {str(k): bool(v) for k, v in aspects.items()},
            "information": {str(k): bool(v) for k, v in info.items()}}


def score_checklist(checklist: Mapping) -> DiagnosticScore:
    a, i = checklist["aspects"], checklist["information"]
    return diagnostic_score(sum(a.values()), len(a), sum(i.values()), len(i))
