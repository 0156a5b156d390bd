"""Stage prompt rendering by slot substitution over text template assets."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .model import Plan, Question, format_seconds

TEMPLATE_NAMES = ("planner", "retriever", "extractor", "evaluator", "evaluator_forced", "summarizer", "captioner")
SLOT_PATTERN = re.compile(r"\{([A-Z][A-Z_]*)\}")
NO_EXPLANATION = "None"


class TemplateError(KeyError):
    """A template slot had no binding at render time."""

    def __init__(self, template: str, slot: str) -> None:
        super().__init__(f"template {template!r} has no binding for slot {{{slot}}}")
        self.template = template
        self.slot = slot

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(SLOT_PATTERN.findall(self.body))

    def render(self, bindings: Mapping[str, str]) -> str:
        # Single pass over the body: substituted values are never rescanned,
        # so memory dictionaries full of braces pass through untouched.
        def substitute(match: re.Match[str]) -> str:
            slot = match.group(1)
            if slot not in bindings:
                raise TemplateError(self.name, slot)
            return bindings[slot]

        return SLOT_PATTERN.sub(substitute, self.body)


class TemplateSet:
    """The prompt templates for every stage, immutable once loaded."""

    def __init__(self, templates: Mapping[str, PromptTemplate]) -> None:
        missing = set(TEMPLATE_NAMES) - set(templates)
        if missing:
            raise ValueError(f"missing templates: {sorted(missing)}")
        self._templates = dict(templates)

    @classmethod
    def from_dir(cls, directory: str | Path) -> TemplateSet:
        directory = Path(directory)
        return cls({name: PromptTemplate(name, _strip_final_newline((directory / f"{name}.txt").read_text("utf-8")))
                    for name in TEMPLATE_NAMES})

    @classmethod
    def default(cls) -> TemplateSet:
        root = resources.files("traveler") / "templates"
        return cls({name: PromptTemplate(name, _strip_final_newline((root / f"{name}.txt").read_text("utf-8")))
                    for name in TEMPLATE_NAMES})

    def __getitem__(self, name: str) -> PromptTemplate:
        return self._templates[name]


def _strip_final_newline(text: str) -> str:
    return text[:-1] if text.endswith("\n") else text


_DEFAULT: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = TemplateSet.default()
    return _DEFAULT


def render_planner(q: Question, m_text: str, explanation: str | None = None,
                   templates: TemplateSet | None = None) -> str:
    templates = templates or default_templates()
    return templates["planner"].render({
        "QUESTION": q.text,
        "CHOICES": q.render_choices(),
        "INFO": m_text,
        "EXPLANATION": explanation if explanation else NO_EXPLANATION,
    })


def render_retriever(q: Question, plan: Plan, m_text: str, current_t: float, window_s: float, length_s: float,
                     templates: TemplateSet | None = None) -> str:
    # Choices are deliberately withheld from the retriever.
    templates = templates or default_templates()
    return templates["retriever"].render({
        "LENGTH": format_seconds(length_s),
        "INFO": m_text,
        "PLAN": plan.render(),
        "CURR": format_seconds(current_t),
        "QUESTION": q.text,
        "WINDOW_SIZE": format_seconds(window_s),
    })


def render_extractor(q: Question, plan: Plan, m_text: str, caption: str, current_t: float, length_s: float, n: int,
                     templates: TemplateSet | None = None) -> str:
    if n < 1:
        raise ValueError("extractor needs n >= 1")
    templates = templates or default_templates()
    # PLAN is bound so that a customised template may reference it.
    return templates["extractor"].render({
        "LENGTH": format_seconds(length_s),
        "INFO": m_text,
        "PLAN": plan.render(),
        "CURR": format_seconds(current_t),
        "FRAME_CAPTION": caption,
        "N_QUESTIONS": str(n),
        "QUESTION": q.text,
    })


def render_evaluator(q: Question, plan: Plan, m_text: str, forced: bool = False,
                     templates: TemplateSet | None = None) -> str:
    templates = templates or default_templates()
    return templates["evaluator_forced" if forced else "evaluator"].render({
        "INFO": m_text,
        "PLAN": plan.render(),
        "QUESTION": q.text,
        "CHOICES": q.render_choices(),
    })


def render_summarizer(m_text: str, templates: TemplateSet | None = None) -> str:
    templates = templates or default_templates()
    return templates["summarizer"].render({"INFO": m_text})


def render_captioner(templates: TemplateSet | None = None) -> str:
    templates = templates or default_templates()
    return templates["captioner"].render({})
