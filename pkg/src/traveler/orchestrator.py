"""The traverse / locate / evaluate / replan loop for a single question."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

from .agents import AgentError, Agents
from .backends import BackendPool
from .frames import Frame, FrameProvider, ProviderError, expand_window, sample_even
from .model import (
    Answer,
    Continue,
    MemoryBank,
    MemoryEntry,
    Plan,
    QAPair,
    Question,
    RunConfig,
    Verdict,
    round_ts,
)
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

GENERIC_PLAN = Plan(("Gather information relevant to the question from informative frames.",))


@dataclass(frozen=True)
class VideoMeta:
    id: str
    duration_seconds: float

    def __post_init__(self) -> None:
        if not self.duration_seconds > 0:
            raise ValueError("duration_seconds must be positive")


@dataclass
class IterationRecord:
    index: int
    plan: Plan
    selected_t: float
    window_ts: list[float]
    caption: str
    qa: list[QAPair]
    verdict: Verdict
    memory_chars_after: int
    summarized: bool
    latency_ms: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self, include_latency: bool = True) -> dict[str, Any]:
        if isinstance(self.verdict, Answer):
            verdict: dict[str, Any] = {"answer": self.verdict.index}
        else:
            verdict = {"continue": self.verdict.explanation}
        record = {
            "index": self.index,
            "plan": list(self.plan.steps),
            "selected_t": self.selected_t,
            "window_ts": self.window_ts,
            "caption": self.caption,
            "qa": [{"question": p.question, "answer": p.answer} for p in self.qa],
            "verdict": verdict,
            "memory_chars_after": self.memory_chars_after,
            "summarized": self.summarized,
            "warnings": self.warnings,
        }
        if include_latency:
            record["latency_ms"] = self.latency_ms
        return record


@dataclass
class RunResult:
    answer_index: int | None
    iterations: list[IterationRecord]
    forced: bool
    total_frames_viewed: int
    error: str | None = None
    init_warnings: list[str] = field(default_factory=list)
    latency_ms: int = 0


def init_memory(video: VideoMeta, provider: FrameProvider, agents: Agents, k: int) -> MemoryBank:
    """Caption ``k`` evenly spaced frames. Frames that cannot be captioned are skipped."""
    bank = MemoryBank(video.duration_seconds)
    for t in sample_even(video.duration_seconds, k):
        try:
            caption = agents.caption_frame(provider.resolve(t))
        except (AgentError, ProviderError) as exc:
            agents.warn(f"initial caption at {t}s skipped: {exc}")
            continue
        bank.insert(t, MemoryEntry(caption))
    return bank


def maybe_summarize(agents: Agents, m: MemoryBank, threshold: int) -> tuple[MemoryBank, bool]:
    if threshold < 1:
        raise ValueError("threshold must be positive")
    if m.char_size() <= threshold:
        return m, False
    return agents.summarize_memory(m), True


def uniform_timestamp(i: int, max_iterations: int, duration: float) -> float:
    """The i-th of ``max_iterations`` evenly spread interior points (retriever ablation)."""
    return round_ts(duration * i / (max_iterations + 1))


def run_question(
    q: Question,
    video: VideoMeta,
    provider: FrameProvider,
    pool: BackendPool,
    config: RunConfig | None = None,
    *,
    scope: str | None = None,
    templates: TemplateSet | None = None,
) -> RunResult:
    config = config or RunConfig()
    agents = Agents(pool, config, templates, scope=video.id if scope is None else scope)
    duration = video.duration_seconds
    n_questions = config.questions_per_frame

    memory = init_memory(video, provider, agents, config.memory_init_count)
    result = RunResult(None, [], False, config.memory_init_count, init_warnings=list(agents.warnings))

    current_t = 0.0
    explanation: str | None = None
    for i in range(1, config.max_iterations + 1):
        forced = i == config.max_iterations
        agents.warnings = []
        latency_before = agents.latency_ms
        try:
            plan = GENERIC_PLAN if config.no_planner else agents.plan(q, memory, explanation)
            if config.uniform_sampling:
                t = uniform_timestamp(i, config.max_iterations, duration)
            else:
                t = agents.select_timestamp(q, plan, memory, current_t, config.window_seconds, duration)
            window = expand_window(t, config.window_halfwidth, config.grid_step_seconds, duration)
            result.total_frames_viewed += len(window)

            center = provider.resolve(t)
            caption = agents.caption_frame(center)
            neighbours: list[tuple[float, Frame]] = []
            for ts in window:
                if ts == t:
                    continue
                try:
                    neighbours.append((ts, provider.resolve(ts)))
                except ProviderError as exc:
                    agents.warn(f"window frame at {ts}s skipped: {exc}")

            qa: list[QAPair] = []
            if n_questions > 0:
                questions = agents.generate_questions(q, plan, memory, caption, t, duration, n_questions)
                qa = agents.answer_questions([center] + [f for _, f in neighbours], questions)
            memory.insert(t, MemoryEntry(caption, qa))
            for ts, frame in neighbours:
                try:
                    memory.insert(ts, MemoryEntry(agents.caption_frame(frame)))
                except AgentError as exc:
                    agents.warn(f"window caption at {ts}s skipped: {exc}")

            memory, summarized = maybe_summarize(agents, memory, config.summarize_threshold_chars)
            error = None
            try:
                verdict = agents.evaluate(q, plan, memory, forced)
            except AgentError as exc:
                if not forced or exc.kind != "parse_failure":
                    raise
                verdict, error = Answer(0), f"forced evaluation unparsable, defaulted to choice 0: {exc}"
        except (AgentError, ProviderError) as exc:
            logger.error("run %s aborted at iteration %d: %s", agents.scope, i, exc)
            result.error = f"iteration {i}: {exc}"
            break

        result.iterations.append(IterationRecord(
            index=i, plan=plan, selected_t=t, window_ts=window, caption=caption, qa=qa, verdict=verdict,
            memory_chars_after=memory.char_size(), summarized=summarized,
            latency_ms=agents.latency_ms - latency_before, warnings=list(agents.warnings),
        ))
        current_t = t
        if isinstance(verdict, Answer):
            result.answer_index = verdict.index
            result.forced = forced
            result.error = error
            break
        assert isinstance(verdict, Continue)
        explanation = verdict.explanation

    result.latency_ms = agents.latency_ms
    return result
