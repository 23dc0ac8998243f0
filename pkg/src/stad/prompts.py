"""Prompt template loading and rendering.

Templates are plain text files shipped as package data. A run can override
any of them by pointing config at a directory holding files with the same
names. Placeholders use the {{ name }} form so literal JSON braces in the
template body need no escaping.
"""
from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "decompose",
    "subtask_answers",
    "consistency",
    "rewrite",
    "skill_generation",
    "skill_mapping",
    "answer",
    "target",
    "reconstruction",
    "probe",
)

_TOKEN = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")


class TemplateError(Exception):
    pass


def render(template: str, values: dict[str, object]) -> str:
    """Substitute {{ name }} tokens; unknown names raise TemplateError."""

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise TemplateError(f"template placeholder {key!r} has no value")
        return str(values[key])

    return _TOKEN.sub(sub, template)


class TemplateSet:
    """Resolves template text by name, preferring an override directory."""

    def __init__(self, overrides_dir: Path | str | None = None):
        self.overrides_dir = Path(overrides_dir) if overrides_dir else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in TEMPLATE_NAMES:
            raise TemplateError(f"unknown template {name!r}")
        if name in self._cache:
            return self._cache[name]
        text = None
        if self.overrides_dir is not None:
            candidate = self.overrides_dir / f"{name}.txt"
            if candidate.exists():
                text = candidate.read_text(encoding="utf-8")
        if text is None:
            text = (
                resources.files("stad").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
            )
        self._cache[name] = text
        return text

    def render(self, name: str, **values: object) -> str:
        return render(self.get(name), values)


DEFAULT_TEMPLATES = TemplateSet()
