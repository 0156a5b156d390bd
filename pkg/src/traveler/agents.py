"""Stage adapters: compose a prompt, call a backend, parse the reply into a typed value."""

from __future__ import annotations

import ast
import json
import logging
import math
import re
import warnings
from typing import Callable, Sequence, TypeVar

from . import prompts
from .backends import BackendError, BackendPool, CompletionRequest
from .frames import Frame, clamp
from .model import Answer, Continue, MemoryBank, Plan, QAPair, Question, RunConfig, Verdict, parse_memory

logger = logging.getLogger(__name__)

T = TypeVar("T")

MAX_PLAN_STEPS = 5
UNANSWERED = "unanswered"
NO_EXPLANATION = "No explanation given."


class AgentError(Exception):
    """A stage could not produce a typed result. ``raw_output`` keeps the model text for tracing."""

    KINDS = ("parse_failure", "backend_failure", "empty_output")

    def __init__(self, stage: str, kind: str, raw_output: str = "", detail: str = "") -> None:
        if kind not in self.KINDS:
            raise ValueError(f"unknown AgentError kind {kind!r}")
        super().__init__(f"{stage}: {kind}" + (f" ({detail})" if detail else ""))
        self.stage = stage
        self.kind = kind
        self.raw_output = raw_output


# -- parsers ----------------------------------------------------------------

_PLAN_STEP = re.compile(r"^\s*[*_]*(?:step\s*)?(\d{1,3})[.):][*_]*\s+(.*?)\s*$", re.IGNORECASE)


def parse_plan(text: str, max_steps: int = MAX_PLAN_STEPS) -> Plan:
    """Numbered steps after the last ``PLAN`` marker (or anywhere, if the marker is absent)."""
    if not text.strip():
        raise AgentError("planner", "empty_output", text)
    marker = text.rfind("PLAN")
    regions = [text[marker + 4:], text] if marker >= 0 else [text]
    for region in regions:
        steps = []
        for line in region.splitlines():
            match = _PLAN_STEP.match(line)
            if match and match.group(2).strip("*_ "):
                steps.append(match.group(2).strip("*_ "))
        if steps:
            return Plan(tuple(steps[:max_steps]), raw=text)
    raise AgentError("planner", "parse_failure", text, "no numbered list")


_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")


def parse_timestamp(text: str, duration: float) -> float:
    """First real-number literal in ``text``, clamped into ``[0, duration]``."""
    if not text.strip():
        raise AgentError("retriever", "empty_output", text)
    for match in _NUMBER.finditer(text):
        value = float(match.group(0))
        if math.isfinite(value):
            return clamp(value, duration)
    raise AgentError("retriever", "parse_failure", text, "no finite number")


_FENCE = re.compile(r"```[A-Za-z0-9_+-]*")
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_MAX_BRACKET_TRIES = 64


def _first_string_list(text: str) -> list[str] | None:
    opens = [i for i, ch in enumerate(text) if ch == "["][:_MAX_BRACKET_TRIES]
    closes = [i for i, ch in enumerate(text) if ch == "]"]
    for start in opens:
        for end in closes:
            if end <= start:
                continue
            chunk = text[start:end + 1]
            for loader in (json.loads, ast.literal_eval):
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")  # compile-time warnings on odd literals
                        value = loader(chunk)
                except Exception:  # literal_eval can raise almost anything on hostile input
                    continue
                if isinstance(value, list) and value and all(isinstance(v, str) for v in value):
                    return value
    return None


def parse_questions(text: str, n: int) -> list[str]:
    """At most ``n`` questions from a bracketed string list, falling back to one question per line."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not text.strip():
        raise AgentError("extractor_qgen", "empty_output", text)
    body = _FENCE.sub("", text)
    found = _first_string_list(body)
    if found is None:
        found = []
        for line in body.splitlines():
            line = _BULLET.sub("", line).strip().strip(",").strip().strip("\"'").strip()
            if line and any(ch.isalnum() for ch in line):
                found.append(line)
    questions = [q.strip() for q in found if q.strip()]
    if not questions:
        raise AgentError("extractor_qgen", "parse_failure", text, "no questions")
    return questions[:n]


_FINAL_ANSWER = "final answer:"
_ANSWER_TOKEN = re.compile(r"^[\s*_`\"'(\[]*(?:(?P<int>[-+]?\d+)(?![\d.]*\d)|(?P<none>none)\b)", re.IGNORECASE)


def parse_verdict(text: str, n_choices: int, forced: bool = False) -> Verdict:
    """Read the token after the last ``Final Answer:`` marker.

    An in-range integer gives :class:`Answer`; ``None`` gives :class:`Continue`
    carrying the text before the marker, except in forced mode where it is a
    parse failure like any other unusable token.
    """
    if not text.strip():
        raise AgentError("evaluator", "empty_output", text)
    idx = text.lower().rfind(_FINAL_ANSWER)
    if idx < 0:
        raise AgentError("evaluator", "parse_failure", text, "no Final Answer marker")
    match = _ANSWER_TOKEN.match(text[idx + len(_FINAL_ANSWER):])
    if match is None:
        raise AgentError("evaluator", "parse_failure", text, "unreadable answer token")
    if match.group("int") is not None:
        k = int(match.group("int"))
        if 0 <= k < n_choices:
            return Answer(k)
        raise AgentError("evaluator", "parse_failure", text, f"answer {k} out of range")
    if forced:
        raise AgentError("evaluator", "parse_failure", text, "None returned in forced mode")
    explanation = text[:idx].rstrip().rstrip("*_#").strip()
    return Continue(explanation or NO_EXPLANATION)


# -- stage adapters ------------------------------------------------------------

class Agents:
    """The Planner, Retriever, Extractor, Evaluator and Summarizer bound to one backend pool.

    ``scope`` tags every request with the run it belongs to.
    """

    def __init__(self, pool: BackendPool, config: RunConfig | None = None,
                 templates: prompts.TemplateSet | None = None, scope: str = "") -> None:
        self.pool = pool
        self.config = config or RunConfig()
        self.templates = templates or prompts.default_templates()
        self.scope = scope
        self.latency_ms = 0
        self.warnings: list[str] = []

    def warn(self, message: str) -> None:
        logger.warning("%s%s", f"[{self.scope}] " if self.scope else "", message)
        self.warnings.append(message)

    def _call(self, role: str, prompt: str, images: Sequence[Frame] = ()) -> str:
        max_tokens = self.config.lmm_max_tokens if images else self.config.llm_max_tokens
        req = CompletionRequest(role, prompt, tuple(images), max_tokens, self.config.temperature, self.scope)
        try:
            response = self.pool.complete(req)
        except BackendError as exc:
            raise AgentError(role, "backend_failure", "", str(exc)) from exc
        self.latency_ms += response.latency_ms
        return response.text

    def _call_parsed(self, role: str, prompt: str, parser: Callable[[str], T]) -> T:
        """Ask once, and re-ask with the same prompt if the reply does not parse."""
        try:
            return parser(self._call(role, prompt))
        except AgentError as first:
            if first.kind == "backend_failure":
                raise
            self.warn(f"{role} reply unusable ({first}), asking again")
        return parser(self._call(role, prompt))

    def plan(self, q: Question, m: MemoryBank, explanation: str | None = None) -> Plan:
        prompt = prompts.render_planner(q, m.render(), explanation, self.templates)
        return self._call_parsed("planner", prompt, parse_plan)

    def select_timestamp(self, q: Question, plan: Plan, m: MemoryBank, current_t: float,
                         window_s: float, duration: float) -> float:
        if not duration > 0:
            raise ValueError("duration must be positive")
        prompt = prompts.render_retriever(q, plan, m.render(), current_t, window_s, duration, self.templates)
        return self._call_parsed("retriever", prompt, lambda text: parse_timestamp(text, duration))

    def caption_frame(self, frame: Frame) -> str:
        text = self._call("captioner", prompts.render_captioner(self.templates), [frame]).strip()
        if not text:
            raise AgentError("captioner", "empty_output", text)
        return text

    def generate_questions(self, q: Question, plan: Plan, m: MemoryBank, caption: str, current_t: float,
                           duration: float, n: int) -> list[str]:
        prompt = prompts.render_extractor(q, plan, m.render(), caption, current_t, duration, n, self.templates)
        return self._call_parsed("extractor_qgen", prompt, lambda text: parse_questions(text, n))

    def answer_questions(self, frames: Sequence[Frame], questions: Sequence[str]) -> list[QAPair]:
        """One VQA call per question. ``frames[0]`` is the centre frame."""
        if not frames or not questions:
            raise ValueError("need at least one frame and one question")
        images = list(frames) if self.config.multi_image_vqa and self.pool.lmm_supports_multi_image else [frames[0]]
        pairs = []
        for question in questions:
            try:
                answer = self._call("extractor_vqa", question, images).strip()
            except AgentError as exc:
                self.warn(f"question {question!r} unanswered: {exc}")
                answer = ""
            pairs.append(QAPair(question, answer or UNANSWERED))
        return pairs

    def evaluate(self, q: Question, plan: Plan, m: MemoryBank, forced: bool = False) -> Verdict:
        prompt = prompts.render_evaluator(q, plan, m.render(), forced, self.templates)
        return self._call_parsed("evaluator", prompt, lambda text: parse_verdict(text, len(q.choices), forced))

    def summarize_memory(self, m: MemoryBank) -> MemoryBank:
        """Condensed copy of ``m`` with the same keys, or ``m`` itself if the summary is unusable."""
        if len(m) == 0:
            return m
        try:
            text = self._call("summarizer", prompts.render_summarizer(m.render(), self.templates))
            summary = parse_memory(text, m.duration)
        except (AgentError, ValueError) as exc:
            self.warn(f"summarization skipped: {exc}")
            return m
        if summary.keys() != m.keys():
            self.warn("summarization skipped: summary changed the key set")
            return m
        return summary
