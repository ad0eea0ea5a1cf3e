"""Configuration and the per-dialogue run: extract, build the graph, generate prompts, respond."""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .clients import (
    CacheMode,
    ChatClient,
    HttpChatBackend,
    HttpSearchBackend,
    ReplayCache,
    SearchClient,
    StaticSearchBackend,
)
from .dialogue import Dialogue, Role
from .extraction import LexiconExtractor, LLMExtractor, extract_concepts, extract_patient_characteristics, fill_slots
from .graph import PatientGraph, attach_neighborhood, link_mention, linearize, upsert_characteristics, upsert_concept
from .inference import GenerationRequest, assemble_prompt, RecommendationResult, generate, render_prompt_block
from .kg import EntityType, KnowledgeGraph, Neighborhood, load_kg_dir
from .prompts import (
    PATH_SOURCES,
    Prompt,
    PromptKind,
    RelationChoice,
    excluded_medications,
    kg_verification,
    llm_reasoning_prompts,
    load_schemas,
    match_paths,
    neighborhood_prompts,
    select_relation,
    web_search_prompts,
)
from . import templates as tpl

log = logging.getLogger(__name__)

SOURCES = ("kg", "llm", "web")
# window radius per task when the config leaves it unset; None is unbounded
DEFAULT_WINDOW = {"recommend": None, "interview": 1}
_PATH_FIELDS = ("kg_dir", "lexicon", "schemas", "template_dir", "demonstrations_dir", "candidates",
                "knowledge", "search_fixture", "cache_path")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    task: str = "recommend"
    kg_dir: Optional[str] = None
    lexicon: Optional[str] = None
    schemas: Optional[str] = None
    template_dir: Optional[str] = None
    demonstrations_dir: Optional[str] = None
    candidates: Optional[str] = None
    window: Optional[int] = None
    window_unbounded: bool = False
    window_cap: Optional[int] = None
    k1: int = 3
    k2: int = 3
    temperature: float = 0.2
    max_tokens: int = 1024
    model: str = "default"
    extractor: str = "lexicon"
    use_np: bool = True
    use_pp: bool = True
    sources: tuple = SOURCES
    search_results: int = 1
    confirm_verification: bool = False
    chat_backend: str = "offline"
    chat_url: Optional[str] = None
    search_backend: str = "none"
    search_url: Optional[str] = None
    knowledge: Optional[str] = None
    search_fixture: Optional[str] = None
    cache_path: Optional[str] = None
    cache_mode: str = "passthrough"
    retries: int = 2
    workers: int = 1
    concurrent_sources: bool = True

    def __post_init__(self):
        self.sources = tuple(self.sources)
        self.validate_values()

    def validate_values(self) -> None:
        if self.task not in ("recommend", "interview"):
            raise ConfigError(f"task must be recommend or interview, got {self.task!r}")
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigError("k1 and k2 must be >= 1")
        if self.window is not None and self.window < 0:
            raise ConfigError("window must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.sources) - set(SOURCES)
        if unknown:
            raise ConfigError(f"unknown knowledge sources {sorted(unknown)}")
        if self.extractor not in ("lexicon", "llm"):
            raise ConfigError(f"extractor must be lexicon or llm, got {self.extractor!r}")
        if self.chat_backend not in ("offline", "http", "none"):
            raise ConfigError(f"chat_backend must be offline, http or none, got {self.chat_backend!r}")
        if self.search_backend not in ("static", "http", "none"):
            raise ConfigError(f"search_backend must be static, http or none, got {self.search_backend!r}")
        CacheMode(self.cache_mode)

    @property
    def k(self) -> Optional[int]:
        """Extraction window radius; unset means the task default."""
        if self.window_unbounded:
            return None
        return self.window if self.window is not None else DEFAULT_WINDOW[self.task]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def resolved(self, base: Path) -> "PipelineConfig":
        changes = {}
        for name in _PATH_FIELDS:
            v = getattr(self, name)
            if v is not None and not Path(v).is_absolute():
                changes[name] = str((base / v).resolve())
        return self.replace(**changes)

    def validate_files(self) -> None:
        """Every referenced input file must exist (the cache file is created on record)."""
        for name in _PATH_FIELDS:
            v = getattr(self, name)
            if v is None or name == "cache_path":
                continue
            if not Path(v).exists():
                raise ConfigError(f"{name}: {v} does not exist")
        if self.cache_mode == "replay" and (self.cache_path is None or not Path(self.cache_path).exists()):
            raise ConfigError(f"replay mode needs an existing cache_path, got {self.cache_path!r}")

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue  # TOML has no null
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**data)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(tomli.loads(text))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_toml(path.read_text(encoding="utf-8")).resolved(path.parent)


# ---------------------------------------------------------------- resources


@dataclass
class Resources:
    config: PipelineConfig
    kg: KnowledgeGraph
    extractor: object
    schemas: list
    candidates: tuple
    chat: Optional[ChatClient]
    search: Optional[SearchClient]

    @classmethod
    def load(cls, config: PipelineConfig, chat_backend=None, search_backend=None) -> "Resources":
        config.validate_files()
        kg = load_kg_dir(config.kg_dir or tpl.data_path("toy_kg"))
        schemas = load_schemas(config.schemas)
        if config.candidates:
            candidates = tuple(json.loads(Path(config.candidates).read_text(encoding="utf-8")))
        else:
            candidates = tuple(sorted(e for e, t in kg.entity_types.items() if t is EntityType.MEDICATION))
        mode = CacheMode(config.cache_mode)
        cache = ReplayCache(config.cache_path, mode)
        live = mode is not CacheMode.REPLAY
        chat = search = None
        if chat_backend is not None or config.chat_backend != "none":
            if chat_backend is None and live:
                chat_backend = _chat_backend(config)
            chat = ChatClient(chat_backend, cache, mode)
        if "web" in config.sources and (search_backend is not None or config.search_backend != "none"):
            if search_backend is None and live:
                search_backend = _search_backend(config)
            search = SearchClient(search_backend, cache, mode)
        if config.extractor == "llm":
            if chat is None:
                raise ConfigError("the llm extractor needs a chat client")
            extractor = LLMExtractor(chat, _opt_path(config.template_dir), _opt_path(config.demonstrations_dir),
                                     config.temperature, config.model, config.max_tokens)
        else:
            extractor = LexiconExtractor.from_file(config.lexicon or tpl.data_path("toy_kg", "lexicon.json"))
        return cls(config, kg, extractor, schemas, candidates, chat, search)


def _opt_path(p):
    return Path(p) if p else None


def _chat_backend(config: PipelineConfig):
    if config.chat_backend == "http":
        if not config.chat_url:
            raise ConfigError("chat_backend = http needs chat_url")
        return HttpChatBackend(config.chat_url)
    if config.chat_backend == "offline":
        from .offline import offline_chat_backend

        knowledge = json.loads(Path(config.knowledge).read_text(encoding="utf-8")) if config.knowledge else {}
        return offline_chat_backend(knowledge)
    return None


def _search_backend(config: PipelineConfig):
    if config.search_backend == "http":
        if not config.search_url:
            raise ConfigError("search_backend = http needs search_url")
        return HttpSearchBackend(config.search_url)
    if config.search_backend == "static":
        data = json.loads(Path(config.search_fixture).read_text(encoding="utf-8")) if config.search_fixture else {}
        return StaticSearchBackend(data)
    return None


# ---------------------------------------------------------------- graph building


class GraphBuilder:
    """Grows a patient graph as turns arrive; re-running a prefix changes nothing."""

    def __init__(self, extractor, kg: KnowledgeGraph, k: Optional[int], cap: Optional[int] = None):
        self.extractor = extractor
        self.kg = kg
        self.k = k
        self.cap = cap
        self.graph = PatientGraph()
        self.mentions: list = []

    def update(self, d: Dialogue) -> PatientGraph:
        # slot windows reach forward, so every patient turn is revisited; upserts are idempotent
        g = self.graph
        mentions = []
        for m in d.patient_turns():
            for c in extract_concepts(self.extractor, d, m):
                sv = fill_slots(self.extractor, d, c, self.k, self.cap)
                link = link_mention(self.kg, c.name, c.category)
                upsert_concept(g, c, sv, link)
                mentions.append((c, sv, link))
        upsert_characteristics(g, extract_patient_characteristics(self.extractor, d))
        self.mentions = mentions
        return g


def build_graph(extractor, kg: KnowledgeGraph, d: Dialogue, k: Optional[int], cap: Optional[int] = None) -> PatientGraph:
    return GraphBuilder(extractor, kg, k, cap).update(d)


# ---------------------------------------------------------------- one dialogue


@dataclass
class DialogueRun:
    id: str
    graph: PatientGraph
    neighborhood: Neighborhood
    relation: Optional[RelationChoice]
    np: list
    paths: list
    pp: list
    candidates: Optional[tuple]
    prompt: str
    result: RecommendationResult
    warnings: list = field(default_factory=list)

    def trace(self) -> dict:
        return {
            "id": self.id,
            "graph": self.graph.to_dict(),
            "neighborhood": [list(t) for t in self.neighborhood.facts()],
            "relation": self.relation._asdict() if self.relation else None,
            "np": [p.to_dict() for p in self.np],
            "paths": [p.to_dict() for p in self.paths],
            "pp": [p.to_dict() for p in self.pp],
            "candidates": list(self.candidates) if self.candidates is not None else None,
            "prompt": self.prompt,
            "response": self.result.response_text,
            "medications": sorted(self.result.medications),
            "warnings": list(self.result.warnings),
        }


def _path_prompts(res: Resources, g: PatientGraph, n: Neighborhood, warnings: list):
    """(top-k2 paths, path prompts in source order, excluded medications)."""
    cfg = res.config
    paths = match_paths(res.schemas, g, n, cfg.k2, res.kg)
    all_paths = match_paths(res.schemas, g, n, None, res.kg)
    verdicts = kg_verification(res.kg, all_paths, g, confirm=cfg.confirm_verification,
                               template_dir=_verification_dir(cfg)) if "kg" in cfg.sources else []
    excluded = excluded_medications(verdicts)
    verdicts = _by_action(verdicts)[: cfg.k2]

    # each source keeps its own warning list so the merged order does not depend on thread timing
    llm_warnings, web_warnings = [], []

    def llm():
        if "llm" not in cfg.sources or res.chat is None or not paths:
            return []
        return llm_reasoning_prompts(res.chat, paths, res.schemas, _template(cfg, "llm_reasoning"),
                                     cfg.temperature, cfg.model, llm_warnings)[: cfg.k2]

    def web():
        if "web" not in cfg.sources or res.search is None or not paths:
            return []
        return web_search_prompts(res.search, res.chat, paths, res.schemas, cfg.search_results,
                                  _template(cfg, "query_rewrite"), cfg.temperature, cfg.model, web_warnings)[: cfg.k2]

    if cfg.concurrent_sources:
        with ThreadPoolExecutor(max_workers=2) as pool:
            f_llm, f_web = pool.submit(llm), pool.submit(web)
            by_kind = {PromptKind.KG_VERIFICATION: verdicts, PromptKind.LLM_REASONING: f_llm.result(),
                       PromptKind.WEB_SEARCH: f_web.result()}
    else:
        by_kind = {PromptKind.KG_VERIFICATION: verdicts, PromptKind.LLM_REASONING: llm(), PromptKind.WEB_SEARCH: web()}
    pp = [p for kind in PATH_SOURCES for p in by_kind[kind]]
    warnings.extend(llm_warnings + web_warnings)
    return paths, pp, excluded


_ACTION_ORDER = {"exclude": 0, "caution": 1, "confirm": 2}


def _by_action(prompts: list) -> list:
    ordered = sorted(prompts, key=lambda p: _ACTION_ORDER.get(p.info.get("action"), 3))
    return [dataclasses.replace(p, rank=i) for i, p in enumerate(ordered)]


def _verification_dir(cfg: PipelineConfig):
    if cfg.template_dir and (Path(cfg.template_dir) / "verification").is_dir():
        return Path(cfg.template_dir) / "verification"
    return None


def _template(cfg: PipelineConfig, name: str) -> str:
    return tpl.load_template(name, _opt_path(cfg.template_dir))


def _demonstrations(cfg: PipelineConfig, name: str) -> str:
    base = Path(cfg.demonstrations_dir) if cfg.demonstrations_dir else tpl.data_path("demonstrations")
    p = base / f"{name}.json"
    return tpl.render_demonstrations(tpl.load_demonstrations(p)) if p.exists() else ""


def run_dialogue(res: Resources, d: Dialogue, graph: Optional[PatientGraph] = None) -> DialogueRun:
    """Produce the next doctor turn for the dialogue history ending at its last patient turn."""
    cfg = res.config
    h = d.history()
    if not h.turns:
        raise ValueError(f"dialogue {d.id!r} has no patient turn")
    g = graph if graph is not None else build_graph(res.extractor, res.kg, h, cfg.k, cfg.window_cap)
    n = attach_neighborhood(g, res.kg)
    warnings: list = []

    relation, np_prompts = None, []
    counts = n.relation_counts()
    if cfg.use_np and counts:
        relation = select_relation(res.chat, h, counts, _template(cfg, "relation_selection"), cfg.temperature, cfg.model)
        if relation.warning:
            warnings.append(relation.warning)
        np_prompts = neighborhood_prompts(n, relation.relation, cfg.k1, positive=g.positive_concepts())

    paths, pp, excluded = [], [], set()
    if cfg.use_pp:
        paths, pp, excluded = _path_prompts(res, g, n, warnings)

    candidates = None
    if cfg.task == "recommend":
        candidates = tuple(c for c in res.candidates if c not in excluded)
    diseases = sorted(name for name, node in g.concept_nodes.items() if node.category.value == "Disease")
    req = GenerationRequest(
        dialogue_history=h.render(),
        graph_text=linearize(g),
        neighborhood_block=render_prompt_block(np_prompts),
        path_block=render_prompt_block(pp),
        candidate_medications=candidates,
        template=_template(cfg, cfg.task),
        temperature=cfg.temperature,
        demonstrations=_demonstrations(cfg, cfg.task),
        diseases=", ".join(diseases),
        max_tokens=cfg.max_tokens,
        model=cfg.model,
    )
    if res.chat is None:
        raise ValueError("response generation needs a chat client")
    synonyms = {s: t for s, t in res.kg.synonyms.items()}
    prompt = assemble_prompt(req)
    result = generate(res.chat, req, synonyms, retries=cfg.retries)
    result.warnings[:0] = warnings
    return DialogueRun(d.id, g, n, relation, np_prompts, paths, pp, candidates, prompt, result, warnings)


def chat_turn(res: Resources, builder: GraphBuilder, d: Dialogue) -> DialogueRun:
    """One interactive turn: refresh the graph with the new patient utterance, then respond."""
    if d.turns[-1].role is not Role.PATIENT:
        raise ValueError("the last turn must come from the patient")
    g = builder.update(d)
    return run_dialogue(res, d, graph=g)
