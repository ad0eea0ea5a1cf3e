"""Triple store for the external medical knowledge graph."""

from __future__ import annotations

import enum
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from collections.abc import Mapping
from typing import IO, Iterable, NamedTuple, Optional, Union

CORE_RELATIONS = ("drug_treatment", "contraindication", "interaction", "usage", "symptom_of")


class EntityType(str, enum.Enum):
    DISEASE = "Disease"
    SYMPTOM = "Symptom"
    MEDICATION = "Medication"
    ATTRIBUTE = "Attribute"
    OTHER = "Other"


class KGFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = ""):
        self.line = line
        prefix = source + ":" if source else ""
        if line is not None:
            message = f"{prefix}line {line}: {message}"
        elif prefix:
            message = f"{prefix} {message}"
        super().__init__(message)


class KGSchemaError(KGFormatError):
    pass


class Triple(NamedTuple):
    head: str
    relation: str
    tail: str

    def text(self) -> str:
        return f"{self.head} {self.relation} {self.tail}"


@dataclass
class KnowledgeGraph:
    triples: frozenset = frozenset()
    entity_types: dict = field(default_factory=dict)
    synonyms: dict = field(default_factory=dict)
    dangling_synonyms: frozenset = field(default=frozenset(), init=False)

    def __post_init__(self):
        self.triples = frozenset(Triple(*t) for t in self.triples)
        self.entity_types = {k: EntityType(v) for k, v in self.entity_types.items()}
        self.entity_index, self.relation_index = _build_indices(self.triples)
        self._folded_synonyms = {k.casefold(): v for k, v in sorted(self.synonyms.items())}
        self._folded_entities: dict[str, str] = {}
        for name in sorted(self.entities()):
            self._folded_entities.setdefault(name.casefold(), name)
        known = self.entities()
        self.dangling_synonyms = frozenset(s for s, c in self.synonyms.items() if c not in known)

    def entities(self) -> set[str]:
        """Heads plus declared entities; undeclared tails are literals."""
        return {t.head for t in self.triples} | set(self.entity_types)

    def is_literal(self, name: str) -> bool:
        return name not in self.entity_types and not self.entity_index.get(name, {}).get("out")

    def type_of(self, name: str) -> Optional[EntityType]:
        return self.entity_types.get(name)

    def relations(self) -> set[str]:
        return set(self.relation_index)

    def outgoing(self, entity: str) -> frozenset:
        return self.entity_index.get(entity, {}).get("out", frozenset())

    def incoming(self, entity: str) -> frozenset:
        return self.entity_index.get(entity, {}).get("in", frozenset())

    def resolve_exact(self, surface: str) -> Optional[str]:
        if surface in self.entities():
            return surface
        return self._folded_entities.get(surface.casefold())

    def resolve_synonym(self, surface: str) -> Optional[str]:
        if surface in self.synonyms:
            return self.synonyms[surface]
        return self._folded_synonyms.get(surface.casefold())

    def audit(self) -> bool:
        """Rebuild indices from the triple set and compare with the live ones."""
        ent, rel = _build_indices(self.triples)
        return ent == self.entity_index and rel == self.relation_index

    def stats(self) -> "LoadStats":
        return LoadStats(len(self.entities()), len(self.relation_index), len(self.triples))


class LoadStats(NamedTuple):
    entities: int
    relations: int
    triples: int


def _build_indices(triples):
    ent = defaultdict(lambda: {"out": set(), "in": set()})
    rel = defaultdict(set)
    for t in triples:
        ent[t.head]["out"].add(t)
        ent[t.tail]["in"].add(t)
        rel[t.relation].add(t)
    entity_index = {
        k: {"out": frozenset(v["out"]), "in": frozenset(v["in"])} for k, v in ent.items()
    }
    relation_index = {k: frozenset(v) for k, v in rel.items()}
    return entity_index, relation_index


Source = Union[str, os.PathLike, IO[str], IO[bytes], None]


def _open_text(source: Source):
    if source is None:
        return None, ""
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8"), os.fspath(source)
    if isinstance(source, io.TextIOBase):
        return source, getattr(source, "name", "")
    return io.TextIOWrapper(source, encoding="utf-8"), getattr(source, "name", "")


def parse_triples(source: Source) -> list[Triple]:
    fh, name = _open_text(source)
    if fh is None:
        return []
    out = []
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KGFormatError(f"expected 3 tab-separated fields, got {len(parts)}", lineno, name)
            parts = [p.strip() for p in parts]
            if not all(parts):
                raise KGFormatError("empty triple component", lineno, name)
            out.append(Triple(*parts))
    return out


def _reject_conflicting_pairs(name: str):
    def hook(pairs):
        seen: dict = {}
        for k, v in pairs:
            if k in seen and seen[k] != v:
                raise KGSchemaError(f"conflicting declarations for {k!r}: {seen[k]!r} vs {v!r}", None, name)
            seen[k] = v
        return seen

    return hook


def _load_json_map(source: Source) -> dict:
    fh, name = _open_text(source)
    if fh is None:
        return {}
    with fh:
        text = fh.read()
    try:
        data = json.loads(text, object_pairs_hook=_reject_conflicting_pairs(name))
    except json.JSONDecodeError as exc:
        raise KGFormatError(f"invalid JSON: {exc.msg}", exc.lineno, name) from None
    if not isinstance(data, dict):
        raise KGSchemaError("expected a JSON object", None, name)
    return data


def load_kg(triples_source: Source, synonyms_source: Source = None, types_source: Source = None):
    """Load a knowledge graph; returns ``(kg, stats)``."""
    triples = parse_triples(triples_source)
    raw_types = _load_json_map(types_source)
    types = {}
    for entity, t in raw_types.items():
        try:
            types[entity] = EntityType(t)
        except ValueError:
            raise KGSchemaError(f"unknown entity type {t!r} for {entity!r}") from None
    synonyms = {str(k): str(v) for k, v in _load_json_map(synonyms_source).items()}
    kg = KnowledgeGraph(frozenset(triples), types, synonyms)
    return kg, kg.stats()


def load_kg_dir(path) -> KnowledgeGraph:
    """Load ``triples.tsv``/``synonyms.json``/``types.json`` from one directory."""

    def opt(name):
        p = os.path.join(path, name)
        return p if os.path.exists(p) else None

    kg, _ = load_kg(os.path.join(path, "triples.tsv"), opt("synonyms.json"), opt("types.json"))
    return kg


class Neighborhood(Mapping):
    """(relation, entity) pairs one hop from a subgraph, each with witnessing triples."""

    def __init__(self, witnesses: Optional[dict] = None, origin: str = "kg"):
        self._w = {k: frozenset(v) for k, v in (witnesses or {}).items()}
        self.origin = origin

    def __getitem__(self, key):
        return self._w[key]

    def __iter__(self):
        return iter(sorted(self._w))

    def __len__(self):
        return len(self._w)

    def __eq__(self, other):
        if isinstance(other, Neighborhood):
            return self._w == other._w
        return NotImplemented

    def __or__(self, other: "Neighborhood") -> "Neighborhood":
        merged = {k: set(v) for k, v in self._w.items()}
        for k, v in other._w.items():
            merged.setdefault(k, set()).update(v)
        return Neighborhood(merged, self.origin)

    def pairs(self) -> set:
        return set(self._w)

    def facts(self, relation: Optional[str] = None) -> list[Triple]:
        out = set()
        for (r, _), ts in self._w.items():
            if relation is None or r == relation:
                out |= ts
        return sorted(out)

    def relation_counts(self) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for t in self.facts():
            counts[t.relation] += 1
        return dict(counts)

    def __repr__(self):
        return f"Neighborhood({sorted(self._w)!r})"


def neighborhood(kg: KnowledgeGraph, subgraph_entities: Iterable[str], include_incoming: bool = False) -> Neighborhood:
    """One outgoing hop from every entity in the subgraph.

    With ``include_incoming`` the reverse hop is added too, yielding
    ``(relation, head)`` pairs for triples whose tail is in the subgraph.
    """
    witnesses: dict = defaultdict(set)
    for e in set(subgraph_entities):
        for t in kg.outgoing(e):
            witnesses[(t.relation, t.tail)].add(t)
        if include_incoming:
            for t in kg.incoming(e):
                witnesses[(t.relation, t.head)].add(t)
    return Neighborhood(witnesses)


def attribute_facts(kg: KnowledgeGraph, entity: str, attribute_relation: str) -> set[str]:
    return {t.tail for t in kg.outgoing(entity) if t.relation == attribute_relation}
