"""Text template pools for question stems, instructions, and prompts.

Pools live in package assets as plain text, one template per line; blank
lines and ``#`` comments are skipped, so the pools can be reviewed and
extended without touching code. Placeholders use ``{name}`` syntax and are
filled from a context mapping at render time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class UnresolvedPlaceholder(Exception):
    """A template references a placeholder missing from the context."""


def render(template: str, context: Mapping[str, str]) -> str:
    """Fill every ``{name}`` placeholder; unknown names are an error."""

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in context:
            raise UnresolvedPlaceholder(
                f"template needs {{{key}}} but context only has "
                f"{sorted(context)}: {template!r}"
            )
        return str(context[key])

    return _PLACEHOLDER.sub(_sub, template)


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


@dataclass(frozen=True)
class TemplatePool:
    """An ordered, immutable collection of same-purpose templates."""

    name: str
    templates: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.templates)

    def get(self, index: int) -> str:
        return self.templates[index]

    def render(self, index: int, context: Mapping[str, str]) -> str:
        return render(self.templates[index], context)


def _parse_lines(text: str) -> tuple[str, ...]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return tuple(out)


def _asset_text(relative: str) -> str:
    return resources.files("temporalqa").joinpath(f"assets/{relative}").read_text(
        encoding="utf-8"
    )


def load_pool(kind: str, dimension: str) -> TemplatePool:
    """Load a question or instruction pool for one dimension.

    ``kind`` is "question" or "instruction"; dimension is the enum value.
    """
    if kind not in ("question", "instruction"):
        raise ValueError(f"kind must be 'question' or 'instruction', got {kind!r}")
    name = f"{kind}_{dimension}"
    templates = _parse_lines(_asset_text(f"templates/{name}.txt"))
    if not templates:
        raise ValueError(f"template pool {name} is empty")
    return TemplatePool(name, templates)


def load_prompt_pool(name: str) -> TemplatePool:
    """Load a one-per-line prompt pool from the prompts asset dir."""
    templates = _parse_lines(_asset_text(f"prompts/{name}.txt"))
    if not templates:
        raise ValueError(f"prompt pool {name} is empty")
    return TemplatePool(name, templates)


def load_prompt_text(name: str) -> str:
    """Load a whole prompt file verbatim (for multi-line prompts)."""
    return _asset_text(f"prompts/{name}.txt")
