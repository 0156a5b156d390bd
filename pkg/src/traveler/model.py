"""Domain types and the timestamp-keyed memory bank."""

from __future__ import annotations

import ast
import bisect
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Union

TIMESTAMP_DECIMALS = 3


def round_ts(seconds: float) -> float:
    """Normalize a timestamp so float noise never creates duplicate keys."""
    value = round(float(seconds), TIMESTAMP_DECIMALS)
    return 0.0 if value == 0 else value  # drop -0.0


def format_seconds(seconds: float) -> str:
    """Render seconds the way prompts speak about them: ``12.0`` -> ``"12"``."""
    value = round_ts(seconds)
    if value.is_integer():
        return str(int(value))
    return repr(value)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("QAPair question and answer must be non-empty")


@dataclass
class MemoryEntry:
    caption: str
    qa: list[QAPair] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise ValueError("MemoryEntry caption must be non-empty")

    def render_items(self) -> list[str]:
        return [f"Caption: {self.caption}"] + [f"Q: {p.question} A: {p.answer}" for p in self.qa]


class MemoryBank:
    """Ordered map from timestamp (seconds) to collected frame information.

    Keys are rounded to millisecond precision on insertion and always iterate
    in ascending order. Inserting at an existing timestamp merges: the stored
    caption is kept and the incoming QA pairs are appended.
    """

    def __init__(self, duration: float | None = None) -> None:
        if duration is not None and not (math.isfinite(duration) and duration > 0):
            raise ValueError(f"duration must be positive and finite, got {duration!r}")
        self.duration = duration
        self._keys: list[float] = []
        self._entries: dict[float, MemoryEntry] = {}

    def insert(self, t: float, entry: MemoryEntry) -> MemoryBank:
        if not math.isfinite(t) or t < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {t!r}")
        if self.duration is not None and t > self.duration:
            raise ValueError(f"timestamp {t} exceeds video duration {self.duration}")
        key = round_ts(t)
        existing = self._entries.get(key)
        if existing is None:
            bisect.insort(self._keys, key)
            self._entries[key] = MemoryEntry(entry.caption, list(entry.qa))
        else:
            existing.qa.extend(entry.qa)
        return self

    def render(self) -> str:
        parts = []
        for key in self._keys:
            items = ", ".join(json.dumps(s, ensure_ascii=False) for s in self._entries[key].render_items())
            parts.append(f"{key!r}: [{items}]")
        return "{" + ", ".join(parts) + "}"

    def char_size(self) -> int:
        return len(self.render())

    def keys(self) -> list[float]:
        return list(self._keys)

    def items(self) -> Iterator[tuple[float, MemoryEntry]]:
        for key in self._keys:
            yield key, self._entries[key]

    def qa_pairs(self) -> list[QAPair]:
        return [pair for _, entry in self.items() for pair in entry.qa]

    def copy(self) -> MemoryBank:
        clone = MemoryBank(self.duration)
        for key, entry in self.items():
            clone.insert(key, entry)
        return clone

    def __getitem__(self, t: float) -> MemoryEntry:
        return self._entries[round_ts(t)]

    def __contains__(self, t: object) -> bool:
        return isinstance(t, (int, float)) and round_ts(t) in self._entries

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self) -> Iterator[float]:
        return iter(list(self._keys))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return self._keys == other._keys and self._entries == other._entries

    def __repr__(self) -> str:
        return f"MemoryBank({self.render()})"


def memory_insert(m: MemoryBank, t: float, e: MemoryEntry) -> MemoryBank:
    return m.insert(t, e)


def memory_render(m: MemoryBank) -> str:
    return m.render()


def memory_char_size(m: MemoryBank) -> int:
    return m.char_size()


_QA_ITEM = re.compile(r"^Q:\s*(?P<q>.+?)\s+A:\s*(?P<a>.+)$", re.DOTALL)
_DICT_SPAN = re.compile(r"\{.*\}", re.DOTALL)


def parse_memory(text: str, duration: float | None = None) -> MemoryBank:
    """Parse dictionary-style text (as produced by :meth:`MemoryBank.render`).

    Tolerant of prose around the dictionary and of summarized values: the
    first list item is the caption (``Caption:`` prefix optional), items of
    the form ``Q: ... A: ...`` become QA pairs and anything else is folded
    into the caption. Raises ``ValueError`` when no dictionary can be read.
    """
    match = _DICT_SPAN.search(text)
    if match is None:
        raise ValueError("no dictionary found")
    try:
        raw = ast.literal_eval(match.group(0))
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError) as exc:
        raise ValueError(f"unreadable dictionary: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("parsed value is not a dictionary")

    bank = MemoryBank(duration)
    for key, value in raw.items():
        if isinstance(key, bool) or not isinstance(key, (int, float, str)):
            raise ValueError(f"bad key {key!r}")
        try:
            t = float(key)
        except ValueError as exc:
            raise ValueError(f"bad key {key!r}") from exc
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)) or not value or not all(isinstance(v, str) for v in value):
            raise ValueError(f"bad value for key {key!r}")
        caption_parts = [value[0].removeprefix("Caption:").strip()]
        qa: list[QAPair] = []
        for item in value[1:]:
            qa_match = _QA_ITEM.match(item.strip())
            if qa_match:
                qa.append(QAPair(qa_match["q"].strip(), qa_match["a"].strip()))
            elif item.strip():
                caption_parts.append(item.strip())
        caption = "; ".join(p for p in caption_parts if p)
        if not caption:
            raise ValueError(f"empty caption for key {key!r}")
        if round_ts(t) in bank:
            raise ValueError(f"duplicate key {key!r}")
        bank.insert(t, MemoryEntry(caption, qa))
    return bank


@dataclass(frozen=True)
class Plan:
    steps: tuple[str, ...]
    raw: str = ""

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a plan needs at least one step")

    def render(self) -> str:
        return "\n".join(f"{i}. {step}" for i, step in enumerate(self.steps, start=1))


@dataclass(frozen=True)
class Question:
    text: str
    choices: tuple[str, ...]
    answer_index: int | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) < 2:
            raise ValueError("a question needs at least two choices")
        if self.answer_index is not None and not 0 <= self.answer_index < len(self.choices):
            raise ValueError(f"answer_index {self.answer_index} out of range for {len(self.choices)} choices")

    def render_choices(self) -> str:
        return "\n".join(f"{i}: {choice}" for i, choice in enumerate(self.choices))


@dataclass(frozen=True)
class Answer:
    index: int


@dataclass(frozen=True)
class Continue:
    explanation: str

    def __post_init__(self) -> None:
        if not self.explanation.strip():
            raise ValueError("Continue verdict needs an explanation")


Verdict = Union[Answer, Continue]


@dataclass(frozen=True)
class RunConfig:
    """Loop parameters and ablation switches for one question run."""

    window_halfwidth: int = 2
    num_questions: int = 3
    memory_init_count: int = 5
    max_iterations: int = 4
    summarize_threshold_chars: int = 12000
    lmm_max_tokens: int = 150
    llm_max_tokens: int = 1024
    grid_step_seconds: float = 1.0
    temperature: float = 0.0
    multi_image_vqa: bool = True
    no_planner: bool = False
    captions_only: bool = False
    uniform_sampling: bool = False

    def __post_init__(self) -> None:
        if self.window_halfwidth < 0:
            raise ValueError("window_halfwidth must be >= 0")
        if self.num_questions < 0:
            raise ValueError("num_questions must be >= 0")
        for name in ("memory_init_count", "max_iterations", "summarize_threshold_chars", "lmm_max_tokens", "llm_max_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (math.isfinite(self.grid_step_seconds) and self.grid_step_seconds > 0):
            raise ValueError("grid_step_seconds must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def questions_per_frame(self) -> int:
        return 0 if self.captions_only else self.num_questions

    @property
    def window_seconds(self) -> float:
        return self.window_halfwidth * self.grid_step_seconds
