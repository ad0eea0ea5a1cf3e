"""Final prompt assembly, generation and medication parsing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .clients import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, ChatRequest, ClientError, ReplayMissError, is_replay, with_retries
from .extraction import find_surface
from .prompts import Prompt
from . import templates as tpl

log = logging.getLogger(__name__)

TASKS = ("recommend", "interview")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    dialogue_history: str
    graph_text: str = ""
    neighborhood_block: str = ""
    path_block: str = ""
    candidate_medications: Optional[tuple] = None
    template: str = "recommend"
    temperature: float = DEFAULT_TEMPERATURE
    demonstrations: str = ""
    diseases: str = ""
    max_tokens: int = DEFAULT_MAX_TOKENS
    model: str = "default"

    @property
    def task(self) -> str:
        return "recommend" if self.candidate_medications is not None else "interview"


def render_prompt_block(prompts: Sequence[Prompt]) -> str:
    return "\n".join(f"- {p.text}" for p in prompts)


def _template_text(template: str) -> str:
    # a template id names a shipped file; anything containing a placeholder is treated as the text itself
    if tpl.PLACEHOLDER.search(template):
        return template
    return tpl.load_template(template)


def assemble_prompt(req: GenerationRequest) -> str:
    """Fill the generation template; a non-empty block without a placeholder is an error."""
    text = _template_text(req.template)
    meds = ", ".join(req.candidate_medications) if req.candidate_medications is not None else ""
    values = {
        "Context": req.dialogue_history,
        "Graph": req.graph_text,
        "NP": req.neighborhood_block,
        "PP": req.path_block,
        "Medication": meds,
        "Demonstrations": req.demonstrations,
        "Disease": req.diseases,
    }
    require = tuple(k for k, v in values.items() if v and k != "Disease")
    if req.candidate_medications is not None and "Medication" not in require:
        require += ("Medication",)
    return tpl.render(text, values, require=require)


def parse_medications(response_text: str, candidates: Iterable[str], synonyms: Optional[Mapping[str, str]] = None) -> set[str]:
    """Longest-match, case-folded scan for candidate names and their synonym surfaces."""
    candidates = list(candidates)
    canon = {c.casefold(): c for c in candidates}
    surfaces = {c.casefold(): c for c in candidates}
    for syn, target in (synonyms or {}).items():
        if target.casefold() in canon:
            surfaces.setdefault(syn.casefold(), canon[target.casefold()])
    text = response_text.casefold()
    taken = [False] * len(text)
    found = set()
    for s in sorted(surfaces, key=lambda s: (-len(s), s)):
        if not s:
            continue
        start = 0
        while True:
            i = find_surface(text, s, start)
            if i == -1:
                break
            j = i + len(s)
            if not any(taken[i:j]):
                taken[i:j] = [True] * (j - i)
                found.add(surfaces[s])
            start = i + 1
    return found


@dataclass
class RecommendationResult:
    response_text: str
    medications: set = field(default_factory=set)
    rationale_spans: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def record(self, dialogue_id: str) -> dict:
        return {
            "id": dialogue_id,
            "response": self.response_text,
            "medications": sorted(self.medications),
            "warnings": list(self.warnings),
        }


def result_line(dialogue_id: str, result: Optional[RecommendationResult], error: Optional[str] = None) -> str:
    """One JSON Lines row; a failed dialogue gets an ``error`` field and no medications."""
    if result is None:
        rec = {"id": dialogue_id, "response": None, "medications": [], "warnings": [], "error": error}
    else:
        rec = result.record(dialogue_id)
    return json.dumps(rec, ensure_ascii=False, sort_keys=True)


def generate(llm_client, req: GenerationRequest, synonyms: Optional[Mapping[str, str]] = None,
             retries: int = 2, backoff: float = 0.5, sleep=None) -> RecommendationResult:
    prompt = assemble_prompt(req)
    chat = ChatRequest.user(prompt, temperature=req.temperature, max_tokens=req.max_tokens, model=req.model)
    kwargs = {"sleep": sleep} if sleep is not None else {}
    try:
        if is_replay(llm_client):
            text = llm_client.chat(chat)
        else:
            text = with_retries(lambda: llm_client.chat(chat), retries=retries, backoff=backoff, **kwargs)
    except ReplayMissError:
        raise
    except ClientError as exc:
        raise GenerationError(f"generation failed: {exc}") from exc
    if not text.strip():
        raise GenerationError("empty completion")
    result = RecommendationResult(text)
    if req.candidate_medications is None:
        return result
    result.medications = parse_medications(text, req.candidate_medications, synonyms)
    if not result.medications:
        result.warnings.append("no candidate medication found in response")
    return result
