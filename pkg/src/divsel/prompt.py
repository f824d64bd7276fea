"""Prompt assembly from a placeholder template, and demo permutations."""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError

DEFAULT_TEMPLATE = (
    "### Instruction:\n"
    "{task_description}\n"
    "\n"
    "### Examples:\n"
    "{examples}"
    "\n"
    "### Input:\n"
    "{query}\n"
    "\n"
    "### Response:\n"
)
DEMO_BLOCK = "#Input: {input}\n#Response: {label}\n"
PLACEHOLDERS = ("task_description", "examples", "query")
_PLACEHOLDER_RE = re.compile(r"\{(task_description|examples|query)\}")


class TemplateError(ConfigError):
    pass


class PermutationLimitError(ConfigError):
    pass


def check_template(template: str) -> None:
    present = set(_PLACEHOLDER_RE.findall(template))
    for name in PLACEHOLDERS:
        if name not in present:
            raise TemplateError(f"template is missing the {{{name}}} placeholder")


def render_examples(demos: Sequence[tuple[str, str]]) -> str:
    return "".join(DEMO_BLOCK.format(input=x, label=y) for x, y in demos)


def assemble_prompt(template: str, task_description: str, demos: Sequence[tuple[str, str]],
                    query: str, *, allow_empty: bool = True) -> str:
    """Fill the template in one pass; payload text is inserted verbatim.

    Substitution is a single scan over the template, so braces or
    placeholder names inside payloads are never expanded a second time.
    """
    check_template(template)
    if not demos and not allow_empty:
        raise ConfigError("no demonstrations given and zero-shot prompts are not allowed")
    values = {"task_description": task_description, "examples": render_examples(demos),
              "query": query}
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)


def enumerate_permutations(demos: Sequence, limit: int = 720) -> list[tuple]:
    """All orderings of ``demos`` in lexicographic order of positions."""
    count = math.factorial(len(demos))
    if count > limit:
        raise PermutationLimitError(f"{len(demos)} demos give {count} orderings, over the limit of {limit}")
    return list(itertools.permutations(demos))


@dataclass
class PromptBundle:
    """Rendered prompts, one per query, with demos in the order used."""

    prompts: list[dict] = field(default_factory=list)

    def add(self, query_id: str, demo_ids: Sequence[str], text: str) -> None:
        self.prompts.append({"query_id": query_id, "demo_ids": list(demo_ids), "prompt": text})

    def __len__(self):
        return len(self.prompts)
