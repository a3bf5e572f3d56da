"""Prompt template loading and structured-response extraction."""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


class ResponseParseError(ValueError):
    """The LLM response did not contain the expected structured block."""


def load_template(name: str, prompts_dir: str | Path | None = None) -> str:
    """Read a prompt template; ``prompts_dir`` overrides the bundled defaults."""
    if prompts_dir is not None:
        return (Path(prompts_dir) / f"{name}.txt").read_text(encoding="utf-8")
    return resources.files("kclab.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **fields: str) -> str:
    return template.format(**fields)


def extract_json_block(content: str):
    """Parse the final structured block of a response.

    Prefers the last fenced code block; falls back to the last top-level JSON
    array or object in the raw text (some providers drop the fences).
    """
    blocks = _FENCE_RE.findall(content)
    candidates = list(reversed(blocks)) if blocks else []
    if not candidates:
        for opener, closer in (("[", "]"), ("{", "}")):
            start = content.find(opener)
            end = content.rfind(closer)
            if start != -1 and end > start:
                candidates.append(content[start:end + 1])
    for text in candidates:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            continue
    raise ResponseParseError("response contains no parseable JSON block")


def format_kc_list(kcs) -> str:
    """Human-readable KC listing used inside prompts."""
    return "\n".join(f"- {kc.kc_id}: {kc.name} ({kc.description})" for kc in kcs)
