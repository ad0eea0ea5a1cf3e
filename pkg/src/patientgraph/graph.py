"""Patient-centric graph: dialogue facts about the patient, linked to the KG."""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .extraction import (
    NEGATIVE_STATES,
    POSITIVE_STATES,
    PRIMARY_PATIENT,
    Category,
    ConceptMention,
    SlotValue,
    validate_slot_value,
)
from .kg import EntityType, KnowledgeGraph, Neighborhood, neighborhood

PATIENT_RELATIONS = {
    Category.DISEASE: "has_disease",
    Category.SYMPTOM: "has_symptom",
    Category.MEDICATION: "has_medication",
    Category.PATIENT_CHARACTERISTIC: "has_characteristic",
}
MEMBERSHIP_RELATIONS = frozenset(PATIENT_RELATIONS.values())
_CATEGORY_ORDER = {c: i for i, c in enumerate(Category)}

# Entity types a mention of each category may link to; untyped KG entities count as Other.
COMPATIBLE_TYPES = {
    Category.DISEASE: {EntityType.DISEASE, EntityType.SYMPTOM, EntityType.OTHER},
    Category.SYMPTOM: {EntityType.SYMPTOM, EntityType.DISEASE, EntityType.OTHER},
    Category.MEDICATION: {EntityType.MEDICATION, EntityType.OTHER},
    Category.PATIENT_CHARACTERISTIC: {EntityType.ATTRIBUTE, EntityType.OTHER},
}


class LinkMethod(str, enum.Enum):
    EXACT = "Exact"
    SYNONYM = "Synonym"
    EDIT_DISTANCE = "EditDistance"


@dataclass(frozen=True)
class LinkDecision:
    surface: str
    candidate: Optional[str]
    method: Optional[LinkMethod]
    score: float
    accepted: bool


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """1 - levenshtein / max length, on case-folded strings."""
    a, b = a.casefold(), b.casefold()
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def _compatible(kg: KnowledgeGraph, entity: str, category: Optional[Category]) -> bool:
    if category is None:
        return True
    return (kg.type_of(entity) or EntityType.OTHER) in COMPATIBLE_TYPES[category]


def link_mention(kg: KnowledgeGraph, surface: str, category: Optional[Category] = None, threshold: float = 0.8) -> LinkDecision:
    """Exact match, then synonym table, then the closest type-compatible entity by edit distance."""
    if not surface.strip():
        raise ValueError("cannot link an empty surface")
    exact = kg.resolve_exact(surface)
    if exact is not None and _compatible(kg, exact, category):
        return LinkDecision(surface, exact, LinkMethod.EXACT, 1.0, True)
    syn = kg.resolve_synonym(surface)
    if syn is not None and syn in kg.entities() and _compatible(kg, syn, category):
        return LinkDecision(surface, syn, LinkMethod.SYNONYM, 1.0, True)
    best, best_score = None, -1.0
    for entity in sorted(kg.entities()):
        if not _compatible(kg, entity, category):
            continue
        score = similarity(surface, entity)
        if score > best_score:
            best, best_score = entity, score
    if best is None:
        return LinkDecision(surface, None, None, 0.0, False)
    return LinkDecision(surface, best, LinkMethod.EDIT_DISTANCE, best_score, best_score >= threshold)


@dataclass(frozen=True)
class ConceptNode:
    name: str
    category: Category
    linked: bool = False


Edge = tuple  # (source, relation, target)


@dataclass
class PatientGraph:
    patient_nodes: set = field(default_factory=lambda: {PRIMARY_PATIENT})
    concept_nodes: dict = field(default_factory=dict)
    edges: set = field(default_factory=set)
    provenance: dict = field(default_factory=dict)
    version: int = 0

    def snapshot(self) -> "PatientGraph":
        return copy.deepcopy(self)

    def content(self):
        """Everything except the version counter, for equality checks."""
        return (
            frozenset(self.patient_nodes),
            tuple(sorted(self.concept_nodes.items())),
            frozenset(self.edges),
            tuple(sorted((e, tuple(sorted(t))) for e, t in self.provenance.items())),
        )

    def same_content(self, other: "PatientGraph") -> bool:
        return self.content() == other.content()

    def slot(self, node: str, relation: str) -> Optional[str]:
        for s, r, t in self.edges:
            if s == node and r == relation:
                return t
        return None

    def positive_concepts(self) -> set[str]:
        return {n for n in self.concept_nodes if self.slot(n, "state") in POSITIVE_STATES}

    def negative_concepts(self) -> set[str]:
        return {n for n in self.concept_nodes if self.slot(n, "state") in NEGATIVE_STATES}

    def linked_names(self) -> set[str]:
        return {n for n, node in self.concept_nodes.items() if node.linked}

    def patient_edges(self) -> list:
        return sorted(e for e in self.edges if e[0] in self.patient_nodes)

    def concept_edges(self) -> list:
        return sorted(e for e in self.edges if e[0] not in self.patient_nodes)

    # -------------------------------------------------------------- mutation

    def _add_evidence(self, edge, turns) -> bool:
        old = self.provenance.get(edge)
        new = frozenset(turns) | (old or frozenset())
        if old == new:
            return False
        self.provenance[edge] = new
        return True

    def _functional(self, source: str, relation: str, value: str, turns) -> bool:
        """Record a one-valued edge; the value with the latest evidence is the active one."""
        changed = self._add_evidence((source, relation, value), turns)
        rivals = [e for e in self.provenance if e[0] == source and e[1] == relation]
        winner = max(rivals, key=lambda e: (max(self.provenance[e], default=-1), e[2]))
        for e in rivals:
            if e != winner and e in self.edges:
                self.edges.discard(e)
                changed = True
        if winner not in self.edges:
            self.edges.add(winner)
            changed = True
        return changed

    def _membership(self, patient: str, relation: str, node: str, turns) -> bool:
        edge = (patient, relation, node)
        changed = self._add_evidence(edge, turns)
        if edge not in self.edges:
            self.edges.add(edge)
            changed = True
        return changed

    def _ensure_patient(self, patient: str) -> bool:
        if patient in self.patient_nodes:
            return False
        self.patient_nodes.add(patient)
        return True

    def _bump(self, changed: bool) -> None:
        if changed:
            self.version += 1

    def to_dict(self) -> dict:
        return {
            "patient_nodes": sorted(self.patient_nodes),
            "concept_nodes": {
                k: {"name": v.name, "category": v.category.value, "linked": v.linked}
                for k, v in sorted(self.concept_nodes.items())
            },
            "edges": [list(e) for e in sorted(self.edges)],
            "provenance": [
                {"edge": list(e), "evidence_turns": sorted(t), "active": e in self.edges}
                for e, t in sorted(self.provenance.items())
            ],
            "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PatientGraph":
        return cls(
            patient_nodes=set(data["patient_nodes"]),
            concept_nodes={
                k: ConceptNode(v["name"], Category(v["category"]), bool(v["linked"]))
                for k, v in data["concept_nodes"].items()
            },
            edges={tuple(e) for e in data["edges"]},
            provenance={tuple(p["edge"]): frozenset(p["evidence_turns"]) for p in data["provenance"]},
            version=int(data["version"]),
        )


def upsert_concept(g: PatientGraph, c: ConceptMention, sv: Iterable[SlotValue], link: Optional[LinkDecision] = None) -> PatientGraph:
    """Add (or refresh) the node for ``c``, its patient edge and its slot edges.

    The node is keyed by the linked KG name when ``link`` was accepted,
    otherwise by the mention's canonical/surface form. Applying the same
    batch twice changes nothing, including the version.
    """
    linked = link is not None and link.accepted
    name = link.candidate if linked else c.name
    changed = g._ensure_patient(c.patient)
    node = g.concept_nodes.get(name)
    if node is None:
        g.concept_nodes[name] = ConceptNode(name, c.category, linked)
        changed = True
    else:
        category = min(node.category, c.category, key=_CATEGORY_ORDER.__getitem__)
        merged = ConceptNode(name, category, node.linked or linked)
        if merged != node:
            g.concept_nodes[name] = merged
            changed = True
    changed |= g._membership(c.patient, PATIENT_RELATIONS[c.category], name, {c.turn_index})
    for s in sv:
        validate_slot_value(s)
        changed |= g._functional(name, s.slot, s.value, s.evidence_turns)
    g._bump(changed)
    return g


def upsert_characteristics(g: PatientGraph, svs: Iterable[SlotValue]) -> PatientGraph:
    changed = False
    for s in svs:
        if s.concept is not None:
            raise ValueError("characteristic slot values must not reference a concept")
        validate_slot_value(s)
        changed |= g._ensure_patient(s.patient)
        changed |= g._functional(s.patient, s.slot, s.value, s.evidence_turns)
    g._bump(changed)
    return g


def attach_neighborhood(g: PatientGraph, kg: KnowledgeGraph, include_incoming: bool = False) -> Neighborhood:
    """KG neighborhood of the linked concept nodes; unlinked nodes never seed retrieval."""
    return neighborhood(kg, g.linked_names(), include_incoming=include_incoming)


def linearize(g: PatientGraph) -> str:
    """One ``subject predicate object`` line per edge: patient edges first, then concept edges."""
    return "\n".join(" ".join(e) for e in g.patient_edges() + g.concept_edges())
