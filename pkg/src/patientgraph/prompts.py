"""Neighborhood prompts and path-based prompts from the patient graph and the KG."""

from __future__ import annotations

import enum
import json
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

from .clients import ChatRequest, ClientError, DEFAULT_TEMPERATURE, ReplayMissError, SearchRequest
from .dialogue import Dialogue
from .extraction import CHARACTERISTIC_SLOTS, Category
from .graph import PatientGraph, link_mention
from .kg import EntityType, KnowledgeGraph, Neighborhood, Triple, attribute_facts
from . import templates as tpl

log = logging.getLogger(__name__)

DEFAULT_K1 = 3
DEFAULT_K2 = 3
VERIFY_ATTRIBUTES = ("contraindication", "caution", "interaction", "usage")
EXCLUDING_ATTRIBUTES = frozenset({"contraindication", "interaction"})

VERBALIZATIONS = {
    "drug_treatment": "can be treated with",
    "symptom_of": "is a symptom of",
    "contraindication": "is contraindicated for",
    "caution": "should be used with caution for",
    "interaction": "interacts with",
    "usage": "usage:",
    "dietary_advice": "dietary advice:",
    "check": "can be checked by",
}


class Intent(str, enum.Enum):
    ACQUIRE = "AcquireCandidates"
    EXCLUDE = "ExcludeCandidates"


class PromptKind(str, enum.Enum):
    NEIGHBORHOOD = "Neighborhood"
    KG_VERIFICATION = "KGVerification"
    LLM_REASONING = "LLMReasoning"
    WEB_SEARCH = "WebSearch"


PATH_SOURCES = (PromptKind.KG_VERIFICATION, PromptKind.LLM_REASONING, PromptKind.WEB_SEARCH)


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    text: str
    source_facts: tuple = ()
    rank: int = 0
    meta: tuple = ()  # sorted (key, value) pairs

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")
        if self.kind in (PromptKind.NEIGHBORHOOD, PromptKind.KG_VERIFICATION) and not self.source_facts:
            raise ValueError(f"{self.kind.value} prompt needs witnessing facts")

    @property
    def info(self) -> dict:
        return dict(self.meta)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "text": self.text,
            "rank": self.rank,
            "source_facts": [list(f) for f in self.source_facts],
            "meta": dict(self.meta),
        }


def _meta(**kw) -> tuple:
    return tuple(sorted(kw.items()))


# ---------------------------------------------------------------- relation choice


class RelationChoice(NamedTuple):
    relation: str
    source: str  # "forced", "llm" or "fallback"
    warning: Optional[str] = None


def fallback_relation(counts: Mapping[str, int]) -> str:
    """Relation with the most facts; ties go to the lexicographically first name."""
    if not counts:
        raise ValueError("no relations available")
    return min(counts, key=lambda r: (-counts[r], r))


def _match_relation(answer: str, available: Iterable[str]) -> tuple[Optional[str], bool]:
    """(relation, exact) for an LLM answer; relation is None when nothing fits."""
    cleaned = answer.strip().strip(string.punctuation + " \n\"'`").casefold()
    by_fold = {r.casefold(): r for r in available}
    for r_fold, r in by_fold.items():
        if cleaned == r_fold or cleaned == r_fold.replace("_", " "):
            return r, True
    low = answer.casefold()
    hits = sorted(
        (r for f, r in by_fold.items() if f in low or f.replace("_", " ") in low),
        key=lambda r: (-len(r), r),
    )
    return (hits[0], False) if hits else (None, False)


def select_relation(
    llm_client,
    h: Dialogue,
    available_relations,
    template: Optional[str] = None,
    temperature: float = DEFAULT_TEMPERATURE,
    model: str = "default",
) -> RelationChoice:
    """Pick the knowledge type the next doctor turn needs.

    ``available_relations`` is a set of names or a mapping name -> fact count
    (counts drive the offline fallback). Without a client the fallback is used.
    """
    counts = dict(available_relations) if isinstance(available_relations, Mapping) else {r: 1 for r in available_relations}
    if not counts:
        raise ValueError("available_relations must be non-empty")
    if len(counts) == 1:
        return RelationChoice(next(iter(counts)), "forced")
    if llm_client is None:
        return RelationChoice(fallback_relation(counts), "fallback")
    template = template if template is not None else tpl.load_template("relation_selection")
    prompt = tpl.render(template, {
        "Context": h.render(),
        "Relations": "\n".join(f"- {r}" for r in sorted(counts)),
    })
    answer = llm_client.chat(ChatRequest.user(prompt, temperature=temperature, model=model))
    rel, exact = _match_relation(answer, counts)
    if rel is not None and exact:
        return RelationChoice(rel, "llm")
    if rel is not None:
        return RelationChoice(rel, "llm", f"relation answer {answer.strip()[:80]!r} coerced to {rel!r}")
    fb = fallback_relation(counts)
    return RelationChoice(fb, "fallback", f"relation answer {answer.strip()[:80]!r} not in available set; used {fb!r}")


# ---------------------------------------------------------------- neighborhood prompts


def verbalize(relation: str) -> str:
    return VERBALIZATIONS.get(relation, relation.replace("_", " "))


def neighborhood_prompts(
    n: Neighborhood,
    r_m: str,
    k1: int = DEFAULT_K1,
    positive: Iterable[str] = (),
    template: str = "{head} {relation} {tail}",
    ranker: Optional[Callable[[Triple], tuple]] = None,
) -> list[Prompt]:
    """Top-``k1`` facts carrying relation ``r_m``; facts about positive-state concepts rank first."""
    if k1 < 1:
        raise ValueError("k1 must be >= 1")
    positive = frozenset(positive)
    key = ranker or (lambda t: (t.head not in positive, t.head, t.relation, t.tail))
    facts = sorted(n.facts(r_m), key=key)[:k1]
    return [
        Prompt(
            PromptKind.NEIGHBORHOOD,
            template.format(head=t.head, relation=verbalize(t.relation), tail=t.tail),
            (t,),
            rank,
        )
        for rank, t in enumerate(facts)
    ]


# ---------------------------------------------------------------- path schemas


class Role(NamedTuple):
    kind: str  # Patient, Concept, KGEntity, Value, Any
    types: Optional[frozenset] = None

    @classmethod
    def parse(cls, text: str) -> "Role":
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        if kind not in ("Patient", "Concept", "KGEntity", "Value", "Any"):
            raise ValueError(f"unknown node role {text!r}")
        types = frozenset(t.strip() for t in rest.split("|") if t.strip()) or None
        return cls(kind, types)

    def __str__(self):
        return self.kind + (":" + "|".join(sorted(self.types)) if self.types else "")


@dataclass(frozen=True)
class EdgeConstraint:
    """One step of a path: from a node in role ``source`` along ``relation`` to ``target``.

    ``inverse`` walks the edge backwards (the graph edge runs target -> source).
    ``origin`` restricts the edge to the dialogue graph ("graph") or the KG ("kg").
    """

    source: Role
    relation: str
    target: Role
    inverse: bool = False
    origin: str = "any"

    def relation_ok(self, relation: str) -> bool:
        return self.relation == "*" or relation in self.relation.split("|")

    def origin_ok(self, origin: str) -> bool:
        return self.origin == "any" or self.origin == origin


@dataclass(frozen=True)
class PathSchema:
    id: str
    pattern: tuple
    intent: Intent
    query_template: str
    names: tuple = ()
    search_template: Optional[str] = None
    exclude_negated: bool = True

    def __post_init__(self):
        if not self.pattern:
            raise ValueError(f"schema {self.id!r}: pattern must have at least one edge constraint")
        if self.names and len(self.names) != len(self.pattern) + 1:
            raise ValueError(f"schema {self.id!r}: need {len(self.pattern) + 1} position names")
        positions = set(self.position_names())
        for t in filter(None, (self.query_template, self.search_template)):
            for _, fieldname, _, _ in string.Formatter().parse(t):
                if fieldname is not None and fieldname not in positions:
                    raise ValueError(f"schema {self.id!r}: placeholder {{{fieldname}}} names no pattern position")

    def position_names(self) -> list[str]:
        return list(self.names) if self.names else [str(i) for i in range(len(self.pattern) + 1)]

    @classmethod
    def from_dict(cls, d: dict) -> "PathSchema":
        pattern = tuple(
            EdgeConstraint(
                Role.parse(c["source"]), c.get("relation", "*"), Role.parse(c["target"]),
                bool(c.get("inverse", False)), c.get("origin", "any"),
            )
            for c in d["pattern"]
        )
        return cls(
            d["id"], pattern, Intent(d["intent"]), d["query_template"], tuple(d.get("names", ())),
            d.get("search_template"), bool(d.get("exclude_negated", True)),
        )

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "intent": self.intent.value,
            "pattern": [
                {"source": str(c.source), "relation": c.relation, "target": str(c.target),
                 "inverse": c.inverse, "origin": c.origin}
                for c in self.pattern
            ],
            "query_template": self.query_template,
            "exclude_negated": self.exclude_negated,
        }
        if self.names:
            out["names"] = list(self.names)
        if self.search_template:
            out["search_template"] = self.search_template
        return out


def load_schemas(path=None) -> list[PathSchema]:
    path = path or tpl.data_path("schemas.json")
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [PathSchema.from_dict(d) for d in raw]


class GEdge(NamedTuple):
    source: str
    relation: str
    target: str
    origin: str  # "graph" or "kg"


@dataclass
class CombinedGraph:
    """Dialogue graph plus its KG neighborhood, with role predicates for matching."""

    edges: list
    patients: frozenset
    concepts: dict  # name -> Category
    positive: frozenset
    negative: frozenset
    kg_nodes: frozenset
    kg_types: dict
    out: dict = field(default_factory=lambda: defaultdict(list))
    inc: dict = field(default_factory=lambda: defaultdict(list))

    def __post_init__(self):
        for e in self.edges:
            self.out[e.source].append(e)
            self.inc[e.target].append(e)

    def nodes(self) -> list[str]:
        ns = set(self.patients) | set(self.concepts)
        for e in self.edges:
            ns.add(e.source)
            ns.add(e.target)
        return sorted(ns)

    def satisfies(self, node: str, role: Role, exclude_negated: bool = True) -> bool:
        if role.kind == "Any":
            return True
        if role.kind == "Patient":
            return node in self.patients
        if role.kind == "Concept":
            cat = self.concepts.get(node)
            if cat is None or (exclude_negated and node in self.negative):
                return False
            return role.types is None or cat.value in role.types
        if role.kind == "KGEntity":
            if node not in self.kg_nodes:
                return False
            t = self.kg_types.get(node)
            return role.types is None or (t is not None and t.value in role.types)
        if role.kind == "Value":
            if node in self.patients or node in self.concepts:
                return False
            return role.types is None or node in role.types
        return False


def combined_graph(g: PatientGraph, n: Neighborhood, kg: Optional[KnowledgeGraph] = None) -> CombinedGraph:
    edges = {GEdge(s, r, t, "graph") for s, r, t in g.edges}
    kg_nodes = set()
    for t in n.facts():
        edges.add(GEdge(t.head, t.relation, t.tail, "kg"))
        kg_nodes.update((t.head, t.tail))
    return CombinedGraph(
        edges=sorted(edges),
        patients=frozenset(g.patient_nodes),
        concepts={k: v.category for k, v in g.concept_nodes.items()},
        positive=frozenset(g.positive_concepts()),
        negative=frozenset(g.negative_concepts()),
        kg_nodes=frozenset(kg_nodes),
        kg_types=dict(kg.entity_types) if kg is not None else {},
    )


@dataclass(frozen=True)
class MatchedPath:
    schema_id: str
    nodes: tuple
    edges: tuple
    names: tuple
    intent: Intent
    score: tuple = ()

    @property
    def bindings(self) -> dict:
        return dict(zip(self.names, self.nodes))

    def key(self) -> tuple:
        return (self.schema_id, self.nodes, self.edges)

    def medications(self, kg: Optional[KnowledgeGraph] = None, g: Optional[PatientGraph] = None) -> list[str]:
        out = []
        for node in self.nodes:
            is_med = kg is not None and kg.type_of(node) is EntityType.MEDICATION
            if not is_med and g is not None:
                c = g.concept_nodes.get(node)
                is_med = c is not None and c.category is Category.MEDICATION
            if is_med and node not in out:
                out.append(node)
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema_id,
            "bindings": self.bindings,
            "edges": [list(e) for e in self.edges],
            "intent": self.intent.value,
        }


def enumerate_bindings(schema: PathSchema, cg: CombinedGraph) -> list[tuple]:
    """All (nodes, edges) walks satisfying the schema; no edge is used twice in one walk."""
    found = []
    pattern = schema.pattern
    ok = lambda node, role: cg.satisfies(node, role, schema.exclude_negated)

    def step(i, nodes, used):
        if i == len(pattern):
            found.append((tuple(nodes), tuple(used)))
            return
        c = pattern[i]
        here = nodes[-1]
        if not ok(here, c.source):
            return
        for e in (cg.inc[here] if c.inverse else cg.out[here]):
            if e in used or not c.relation_ok(e.relation) or not c.origin_ok(e.origin):
                continue
            nxt = e.source if c.inverse else e.target
            if ok(nxt, c.target):
                step(i + 1, nodes + [nxt], used + [e])

    for start in cg.nodes():
        if ok(start, pattern[0].source):
            step(0, [start], [])
    return found


def match_paths(
    schemas: Sequence[PathSchema],
    g: PatientGraph,
    n: Neighborhood,
    k2: Optional[int] = DEFAULT_K2,
    kg: Optional[KnowledgeGraph] = None,
    ranker: Optional[Callable[[MatchedPath], tuple]] = None,
) -> list[MatchedPath]:
    """Match every schema against G_p + N(G_p); rank and keep the top ``k2`` (None keeps all)."""
    if k2 is not None and k2 < 1:
        raise ValueError("k2 must be >= 1")
    cg = combined_graph(g, n, kg)
    paths = []
    for idx, schema in enumerate(schemas):
        names = tuple(schema.position_names())
        for nodes, edges in enumerate_bindings(schema, cg):
            has_positive = any(node in cg.positive for node in nodes)
            score = (not has_positive, idx, nodes, tuple(e[:3] for e in edges))
            paths.append(MatchedPath(schema.id, nodes, tuple(GEdge(*e) for e in edges), names, schema.intent, score))
    paths.sort(key=ranker or (lambda p: p.score))
    return paths if k2 is None else paths[:k2]


def render_query(schema: PathSchema, path: MatchedPath, search: bool = False) -> str:
    t = schema.search_template if search and schema.search_template else schema.query_template
    return t.format(**path.bindings)


# ---------------------------------------------------------------- knowledge sources


def patient_facts(g: PatientGraph, kg: KnowledgeGraph) -> dict:
    """Canonical names the patient is known to have or take, each with a supporting graph edge."""
    facts: dict = {}
    denied = set()
    for p, slot, value in sorted(g.edges):
        if p in g.patient_nodes and slot in CHARACTERISTIC_SLOTS:
            link = link_mention(kg, slot, Category.PATIENT_CHARACTERISTIC)
            name = link.candidate if link.accepted else slot
            if value == "yes":
                facts.setdefault(name, (p, slot, value))
            elif value == "no":
                denied.add(name)
    for p, rel, node in sorted(g.edges):
        if p in g.patient_nodes and rel == "has_characteristic" and node not in denied:
            facts.setdefault(node, (p, rel, node))
    for node in sorted(g.positive_concepts()):
        facts.setdefault(node, (node, "state", g.slot(node, "state")))
    for node, c in sorted(g.concept_nodes.items()):
        if c.category is Category.MEDICATION and g.slot(node, "whether_taken") == "yes":
            facts.setdefault(node, (node, "whether_taken", "yes"))
    return facts


def _verification_template(attribute: str, template_dir: Optional[Path]) -> str:
    base = Path(template_dir) if template_dir else tpl.data_path("templates", "verification")
    p = base / f"{attribute}.txt"
    if not p.exists():
        p = base / "default.txt"
    return p.read_text(encoding="utf-8").strip()


def kg_verification(
    kg: KnowledgeGraph,
    paths: Sequence[MatchedPath],
    g: PatientGraph,
    attributes: Sequence[str] = VERIFY_ATTRIBUTES,
    template_dir: Optional[Path] = None,
    confirm: bool = False,
    limit: Optional[int] = None,
) -> list[Prompt]:
    """Check each bound medication's KG attributes against what the patient graph records.

    Conflicts are matched on canonical names only. Exclusions (contraindication,
    interaction) and cautions come out in path order, then attribute order.
    """
    facts = patient_facts(g, kg)
    out: list[Prompt] = []
    seen = set()
    for path in paths:
        for med in path.medications(kg, g):
            if med in seen:
                continue
            seen.add(med)
            conflicts = []
            for attr in attributes:
                for value in sorted(attribute_facts(kg, med, attr)):
                    if value in facts and value != med:
                        conflicts.append((attr, value))
            for attr, value in conflicts:
                text = _verification_template(attr, template_dir).format(medication=med, attribute=attr, conflict=value)
                action = "exclude" if attr in EXCLUDING_ATTRIBUTES else "caution"
                out.append(Prompt(
                    PromptKind.KG_VERIFICATION, text,
                    (Triple(med, attr, value), tuple(facts[value])),
                    meta=_meta(medication=med, attribute=attr, conflict=value, action=action),
                ))
            if not conflicts and confirm:
                text = _verification_template("confirm", template_dir).format(medication=med, attribute="", conflict="")
                out.append(Prompt(
                    PromptKind.KG_VERIFICATION, text, tuple(e[:3] for e in path.edges),
                    meta=_meta(medication=med, action="confirm"),
                ))
    if limit is not None:
        out = out[:limit]
    return [Prompt(p.kind, p.text, p.source_facts, i, p.meta) for i, p in enumerate(out)]


def excluded_medications(prompts: Iterable[Prompt]) -> set[str]:
    return {p.info["medication"] for p in prompts
            if p.kind is PromptKind.KG_VERIFICATION and p.info.get("action") == "exclude"}


def _schema_for(path: MatchedPath, schemas) -> PathSchema:
    for s in schemas:
        if s.id == path.schema_id:
            return s
    raise KeyError(f"no schema {path.schema_id!r}")


def llm_reasoning_prompts(
    llm_client,
    paths: Sequence[MatchedPath],
    schemas: Sequence[PathSchema],
    template: Optional[str] = None,
    temperature: float = DEFAULT_TEMPERATURE,
    model: str = "default",
    warnings: Optional[list] = None,
) -> list[Prompt]:
    """Ask the LLM each path's question; answers become prompts carrying the path."""
    template = template if template is not None else tpl.load_template("llm_reasoning")
    out = []
    for path in paths:
        question = render_query(_schema_for(path, schemas), path)
        prompt = tpl.render(template, {"Question": question})
        answer = llm_client.chat(ChatRequest.user(prompt, temperature=temperature, model=model)).strip()
        if not answer:
            msg = f"empty LLM answer for path question {question!r}; prompt dropped"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out.append(Prompt(
            PromptKind.LLM_REASONING, answer, tuple(e[:3] for e in path.edges), len(out),
            _meta(question=question, schema=path.schema_id),
        ))
    return out


def _clean_query(answer: str) -> str:
    line = next((ln for ln in answer.strip().splitlines() if ln.strip()), "")
    line = re.sub(r"^(?:search query|query)\s*:\s*", "", line.strip(), flags=re.IGNORECASE)
    return line.strip().strip("\"'`").strip()


def web_search_prompts(
    search_client,
    llm_client,
    paths: Sequence[MatchedPath],
    schemas: Sequence[PathSchema],
    per_query: int = 1,
    rewrite_template: Optional[str] = None,
    temperature: float = DEFAULT_TEMPERATURE,
    model: str = "default",
    warnings: Optional[list] = None,
) -> list[Prompt]:
    """Rewrite each path into a search query and wrap the top snippets as prompts.

    Without an LLM client (or when its rewrite is empty) the schema's search
    template, or else its question, is used verbatim. Search failures skip the
    path with a warning; replay misses propagate.
    """

    def warn(msg):
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)

    out = []
    for path in paths:
        schema = _schema_for(path, schemas)
        fallback = render_query(schema, path, search=True)
        query = ""
        if llm_client is not None:
            template = rewrite_template if rewrite_template is not None else tpl.load_template("query_rewrite")
            prompt = tpl.render(template, {"Question": render_query(schema, path)})
            query = _clean_query(llm_client.chat(ChatRequest.user(prompt, temperature=temperature, model=model)))
        query = query or fallback
        try:
            results = search_client.search(SearchRequest(query, per_query))
        except ReplayMissError:
            raise
        except ClientError as exc:
            warn(f"search failed for {query!r}: {exc}")
            continue
        for r in results[:per_query]:
            if not r.snippet.strip():
                continue
            out.append(Prompt(
                PromptKind.WEB_SEARCH, r.snippet, tuple(e[:3] for e in path.edges), len(out),
                _meta(url=r.url, title=r.title, query=query, schema=path.schema_id),
            ))
    return out
