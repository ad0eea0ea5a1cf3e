"""Rule-based stand-in for the chat model, used to run and record the pipeline offline.

It recognises the shipped templates by their fixed wording and answers each
with a deterministic rule. It only reads the text it is given: a medication
is recommended only if one of the knowledge blocks mentions it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .extraction import find_surface

_SECTION = re.compile(r"^(Patient-centric graph|Neighborhood prompts|Path-based prompts|Dialogue context):\s*$", re.MULTILINE)
_WARNING_WORDS = ("contraindicated", "caution", "do not recommend", "interacts with")


def sections(prompt: str) -> dict:
    """Split a generation prompt into its labelled blocks."""
    marks = list(_SECTION.finditer(prompt))
    out = {}
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(prompt)
        out[m.group(1)] = prompt[m.end():end].strip()
    return out


def candidate_list(prompt: str) -> list[str]:
    m = re.search(r"Candidate medications are from (.*?)\. Only name", prompt, re.DOTALL)
    if not m:
        return []
    return [c.strip() for c in m.group(1).split(",") if c.strip()]


@dataclass
class RuleBasedDoctor:
    """Answers relation selection, reasoning, query rewriting and generation prompts.

    ``knowledge`` maps a keyword to advice text for reasoning questions; a
    question mentioning no keyword gets an empty answer.
    """

    knowledge: Mapping[str, str] = field(default_factory=dict)
    preferred_relation: str = "drug_treatment"

    def __call__(self, prompt: str) -> str:
        if "Available knowledge types:" in prompt:
            return self.relation(prompt)
        if "within 50 words" in prompt:
            return self.advice(_field(prompt, "Question"))
        if "web search query" in prompt:
            return self.rewrite(_field(prompt, "Question"))
        if "Candidate medications are from" in prompt:
            return self.recommend(prompt)
        if "interviewing a patient" in prompt:
            return self.interview(prompt)
        return ""

    def relation(self, prompt: str) -> str:
        block = prompt.split("Available knowledge types:", 1)[1]
        rels = re.findall(r"^- (\S+)$", block, re.MULTILINE)
        if self.preferred_relation in rels:
            return self.preferred_relation
        return rels[0] if rels else ""

    def advice(self, question: str) -> str:
        hits = [text for key, text in sorted(self.knowledge.items()) if find_surface(question, key) != -1]
        return " ".join(hits)

    def rewrite(self, question: str) -> str:
        q = question.rstrip("?").strip()
        m = re.match(r"What medications safely relieve (.+) during (.+)$", q)
        if m:
            return f"treatment for {m.group(1)} in {m.group(2)}"
        m = re.match(r"What medications are effective for (.+)$", q)
        if m:
            return f"treatment for {m.group(1)}"
        return q

    def recommend(self, prompt: str) -> str:
        cands = candidate_list(prompt)
        blocks = sections(prompt)
        knowledge = "\n".join(blocks.get(k, "") for k in ("Neighborhood prompts", "Path-based prompts"))
        lines = [ln for ln in knowledge.splitlines() if not any(w in ln.lower() for w in _WARNING_WORDS)]
        found = []
        for line in lines:
            hits = sorted((find_surface(line, c), c) for c in cands if find_surface(line, c) != -1)
            for _, c in hits:
                if c not in found:
                    found.append(c)
        if not found:
            return "I need a little more information before recommending a medication."
        return "Based on your symptoms, I recommend " + ", ".join(found) + "."

    def interview(self, prompt: str) -> str:
        graph = sections(prompt).get("Patient-centric graph", "")
        m = re.search(r"^patient has_(?:symptom|disease) (.+)$", graph, re.MULTILINE)
        if m:
            return f"How long have you had the {m.group(1)}, and is it getting worse?"
        return "Could you describe your main discomfort?"


def _field(prompt: str, label: str) -> str:
    m = re.search(rf"^{label}:\s*(.*)$", prompt, re.MULTILINE)
    return m.group(1).strip() if m else ""


def offline_chat_backend(knowledge: Optional[Mapping[str, str]] = None):
    from .clients import FunctionChatBackend

    return FunctionChatBackend(RuleBasedDoctor(dict(knowledge or {})))
