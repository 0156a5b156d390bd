"""Benchmark harness: JSONL manifests in, JSONL traces and a top-1 accuracy report out."""

from __future__ import annotations

import json
import logging
import queue
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .backends import BackendPool
from .frames import DirectoryFrameProvider, FrameProvider, ProviderError, VideoFileProvider
from .model import Question, RunConfig
from .orchestrator import RunResult, VideoMeta, run_question
from .prompts import TemplateSet

logger = logging.getLogger(__name__)


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ManifestItem:
    id: str
    duration_seconds: float
    question: str
    choices: tuple[str, ...]
    answer_index: int
    frames_dir: str | None = None
    video: str | None = None
    category: str | None = None

    def to_question(self) -> Question:
        return Question(self.question, self.choices, self.answer_index, self.category)

    def open_provider(self) -> FrameProvider:
        if self.frames_dir is not None:
            return DirectoryFrameProvider(self.frames_dir, self.duration_seconds)
        if self.video is not None:
            return VideoFileProvider(self.video, self.duration_seconds)
        raise ProviderError(f"item {self.id} has neither frames_dir nor video")


def parse_manifest_item(raw: Any, base_dir: Path | None = None) -> ManifestItem:
    if not isinstance(raw, dict):
        raise ValueError("line is not a JSON object")
    for key in ("id", "duration_seconds", "question", "choices", "answer_index"):
        if key not in raw:
            raise ValueError(f"missing field {key!r}")
    choices = raw["choices"]
    if not isinstance(choices, list) or len(choices) < 2 or not all(isinstance(c, str) for c in choices):
        raise ValueError("choices must be a list of at least two strings")
    answer_index = raw["answer_index"]
    if isinstance(answer_index, bool) or not isinstance(answer_index, int) or not 0 <= answer_index < len(choices):
        raise ValueError(f"answer_index {answer_index!r} out of range for {len(choices)} choices")
    duration = raw["duration_seconds"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) or not duration > 0:
        raise ValueError(f"duration_seconds must be positive, got {duration!r}")
    frames_dir, video = raw.get("frames_dir"), raw.get("video")
    if (frames_dir is None) == (video is None):
        raise ValueError("exactly one of frames_dir or video is required")

    def resolve(p: str | None) -> str | None:
        if p is None or base_dir is None or Path(p).is_absolute():
            return p
        return str(base_dir / p)

    return ManifestItem(
        id=str(raw["id"]), duration_seconds=float(duration), question=str(raw["question"]),
        choices=tuple(choices), answer_index=answer_index, frames_dir=resolve(frames_dir),
        video=resolve(video), category=raw.get("category"),
    )


def read_manifest(path: str | Path) -> tuple[list[ManifestItem], list[str]]:
    """Valid items plus one ``"line N: reason"`` message per rejected line."""
    path = Path(path)
    items: list[ManifestItem] = []
    problems: list[str] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = parse_manifest_item(json.loads(line), path.parent)
                if item.id in seen:
                    raise ValueError(f"duplicate id {item.id!r}")
            except ValueError as exc:  # json.JSONDecodeError is a ValueError
                problems.append(f"line {lineno}: {exc}")
                continue
            seen.add(item.id)
            items.append(item)
    return items, problems


def load_manifest(path: str | Path) -> list[ManifestItem]:
    items, problems = read_manifest(path)
    for problem in problems:
        logger.warning("%s %s", path, problem)
    if not items:
        raise ManifestError(f"no valid items in manifest {path}" + (f" ({len(problems)} rejected)" if problems else ""))
    return items


# -- traces -------------------------------------------------------------------

def trace_record(item_id: str, result: RunResult, truth: int | None = None,
                 deterministic: bool = False) -> dict[str, Any]:
    record: dict[str, Any] = {
        "id": item_id,
        "answer_index": result.answer_index,
        "correct": truth is not None and result.error is None and result.answer_index == truth,
        "forced": result.forced,
        "error": result.error,
        "total_frames_viewed": result.total_frames_viewed,
        "init_warnings": result.init_warnings,
        "iterations": [it.to_dict(include_latency=not deterministic) for it in result.iterations],
    }
    if not deterministic:
        record["latency_ms"] = result.latency_ms
    return record


def _dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def write_traces(records: Iterable[dict[str, Any]], path: str | Path, append: bool = True) -> None:
    with Path(path).open("a" if append else "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dumps(record) + "\n")


class TraceWriter:
    """Single writer thread owning the trace file.

    Records arrive tagged with their manifest position and are written in
    that order, so the file is identical whatever the completion order.
    """

    _STOP = object()

    def __init__(self, path: str | Path, append: bool = True) -> None:
        self.path = Path(path)
        self.error: OSError | None = None
        self._append = append
        self._queue: queue.Queue[Any] = queue.Queue()
        self._thread = threading.Thread(target=self._run, name="trace-writer", daemon=True)
        self._thread.start()

    def put(self, position: int, record: dict[str, Any]) -> None:
        self._queue.put((position, record))

    def _run(self) -> None:
        pending: dict[int, dict[str, Any]] = {}
        next_position = 0
        try:
            fh = self.path.open("a" if self._append else "w", encoding="utf-8")
        except OSError as exc:
            self.error = exc
            fh = None
        while True:
            msg = self._queue.get()
            if msg is self._STOP:
                break
            position, record = msg
            pending[position] = record
            while next_position in pending and fh is not None:
                try:
                    fh.write(_dumps(pending.pop(next_position)) + "\n")
                    fh.flush()
                except OSError as exc:
                    self.error = exc
                    fh.close()
                    fh = None
                next_position += 1
        if fh is not None:
            fh.close()

    def close(self) -> None:
        self._queue.put(self._STOP)
        self._thread.join()


# -- benchmark ------------------------------------------------------------------

@dataclass
class BenchmarkReport:
    overall_accuracy: float
    per_category: dict[str, float]
    n_items: int
    n_correct: int
    n_errors: int
    n_forced: int
    mean_frames_viewed: float
    mean_iterations: float
    trace_error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def summary(self) -> str:
        lines = [f"accuracy {self.overall_accuracy:.4f} ({self.n_correct}/{self.n_items}), "
                 f"errors {self.n_errors}, forced {self.n_forced}, "
                 f"mean frames {self.mean_frames_viewed:.2f}, mean iterations {self.mean_iterations:.2f}"]
        lines += [f"  {cat}: {acc:.4f}" for cat, acc in sorted(self.per_category.items())]
        if self.trace_error:
            lines.append(f"  trace file error: {self.trace_error}")
        return "\n".join(lines)


@dataclass
class ItemOutcome:
    item: ManifestItem
    result: RunResult | None
    error: str | None = None
    record: dict[str, Any] = field(default_factory=dict)

    @property
    def answer_index(self) -> int | None:
        return self.result.answer_index if self.result else None

    @property
    def correct(self) -> bool:
        return bool(self.record.get("correct"))

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_item(item: ManifestItem, pool: BackendPool, config: RunConfig, deterministic: bool = False,
             templates: TemplateSet | None = None) -> ItemOutcome:
    try:
        provider = item.open_provider()
        video = VideoMeta(item.id, item.duration_seconds)
        result = run_question(item.to_question(), video, provider, pool, config, scope=item.id, templates=templates)
    except Exception as exc:  # harness never aborts on one item
        logger.error("item %s failed: %s", item.id, exc)
        result = RunResult(None, [], False, 0, error=f"{type(exc).__name__}: {exc}")
    record = trace_record(item.id, result, item.answer_index, deterministic)
    return ItemOutcome(item, result, result.error, record)


def summarize_outcomes(outcomes: list[ItemOutcome]) -> BenchmarkReport:
    n = len(outcomes)
    by_category: dict[str, list[bool]] = defaultdict(list)
    for o in outcomes:
        if o.item.category:
            by_category[o.item.category].append(o.correct)
    n_correct = sum(o.correct for o in outcomes)
    return BenchmarkReport(
        overall_accuracy=n_correct / n if n else 0.0,
        per_category={c: sum(v) / len(v) for c, v in sorted(by_category.items())},
        n_items=n,
        n_correct=n_correct,
        n_errors=sum(o.failed for o in outcomes),
        n_forced=sum(bool(o.result and o.result.forced) for o in outcomes),
        mean_frames_viewed=sum(o.result.total_frames_viewed for o in outcomes if o.result) / n if n else 0.0,
        mean_iterations=sum(len(o.result.iterations) for o in outcomes if o.result) / n if n else 0.0,
    )


def run_benchmark(
    items: list[ManifestItem],
    pool: BackendPool,
    config: RunConfig | None = None,
    parallelism: int = 1,
    *,
    trace_path: str | Path | None = None,
    deterministic: bool = False,
    templates: TemplateSet | None = None,
) -> tuple[BenchmarkReport, list[ItemOutcome]]:
    """Run every item with at most ``parallelism`` concurrent questions sharing ``pool``.

    Failed items are scored incorrect and counted in ``n_errors``. Outcomes
    come back in manifest order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    config = config or RunConfig()
    writer = TraceWriter(trace_path) if trace_path is not None else None
    outcomes: list[ItemOutcome | None] = [None] * len(items)
    try:
        with ThreadPoolExecutor(max_workers=parallelism, thread_name_prefix="bench") as executor:
            futures = {executor.submit(run_item, item, pool, config, deterministic, templates): i
                       for i, item in enumerate(items)}
            for future in as_completed(futures):
                position = futures[future]
                outcome = future.result()
                outcomes[position] = outcome
                if writer is not None:
                    writer.put(position, outcome.record)
    finally:
        if writer is not None:
            writer.close()
    done = [o for o in outcomes if o is not None]
    report = summarize_outcomes(done)
    if writer is not None and writer.error is not None:
        report.trace_error = str(writer.error)
    return report, done


def accuracy_from_traces(path: str | Path) -> float:
    """Recount top-1 accuracy straight from a trace file."""
    lines = [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line.strip()]
    return sum(bool(r["correct"]) for r in lines) / len(lines) if lines else 0.0
