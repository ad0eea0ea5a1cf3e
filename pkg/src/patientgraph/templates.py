"""Bracket-placeholder prompt templates (``[Context]``, ``[Graph]`` ...)."""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

PLACEHOLDER = re.compile(r"\[([A-Z][A-Za-z0-9]*(?:/[A-Z][A-Za-z0-9]*)*)\]")


class TemplateError(ValueError):
    pass


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("patientgraph").joinpath("data", *parts)))


def load_template(name_or_path, directory: Optional[Path] = None) -> str:
    """Read a template by path, or by bare name from ``directory`` (default: shipped templates)."""
    p = Path(name_or_path)
    if not p.exists():
        base = directory or data_path("templates")
        p = base / (p.name if p.suffix else p.name + ".txt")
    return p.read_text(encoding="utf-8")


def placeholders(template: str) -> list[str]:
    return list(dict.fromkeys(PLACEHOLDER.findall(template)))


def render(template: str, values: Mapping[str, str], require: tuple = ()) -> str:
    """Substitute ``[Name]`` placeholders in a single pass.

    Every placeholder in the template must have a value, and every name in
    ``require`` must occur in the template. Substituted text is never rescanned.
    """
    present = placeholders(template)
    missing_values = [p for p in present if p not in values]
    if missing_values:
        raise TemplateError(f"unresolved placeholder [{missing_values[0]}]")
    absent = [r for r in require if r not in present]
    if absent:
        raise TemplateError(f"template lacks required placeholder [{absent[0]}]")
    return PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def load_demonstrations(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        demos = json.load(fh)
    if not isinstance(demos, list):
        raise TemplateError(f"{path}: demonstrations must be a JSON list")
    return demos


def render_demonstrations(demos, input_label: str = "Input context", output_label: str = "Output result") -> str:
    blocks = []
    for i, demo in enumerate(demos, start=1):
        out = demo["output"]
        if not isinstance(out, str):
            out = json.dumps(out, ensure_ascii=False)
        blocks.append(f"Example {i}\n{input_label}:\n{demo['input']}\n{output_label}:\n{out}")
    return "\n\n".join(blocks)
