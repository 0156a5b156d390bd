"""Synthetic videos with planted facts, and scripted fixtures that replay a known outcome.

Each scenario is a directory of one-second frames in which exactly one frame
carries a planted fact. The scripted LMM only reports the fact when it is
shown that frame, and the scripted evaluator only answers once the fact has
reached the memory bank (or when forced at the iteration cap). The outcome of
a run is therefore known in advance from the retriever's schedule alone.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from PIL import Image, ImageDraw

from .backends import stable_hash
from .frames import expand_window, frame_filename, sample_even
from .model import RunConfig, format_seconds
from .orchestrator import uniform_timestamp

FORCED_MARKER = "You must select exactly one choice."
PLAN_TEXT = "PLAN\n1. Go to the middle of the video.\n2. Ask what the boy is doing.\n3. Check the end of the video."
QUESTIONS_TEXT = '["What is the boy doing?", "What is he holding?", "Where is he looking?", "Is he seated?"]'
GENERIC_CAPTION = "A child playing in a playground."
GENERIC_ANSWER = "Nothing notable."
CONTINUE_TEXT = "The collected information does not single out one choice.\nFinal Answer: None"


def nearest_second(t: float) -> int:
    """The one-second frame a timestamp resolves to (halves round down)."""
    return math.ceil(t - 0.5)


@dataclass
class Scenario:
    id: str
    duration: int
    question: str
    choices: tuple[str, ...]
    answer_index: int
    fact: str
    fact_second: int | None  # None: the fact is never shown
    retriever_picks: list[float] = field(default_factory=list)
    guess_index: int = 0
    category: str | None = None
    config: RunConfig = field(default_factory=RunConfig)

    def schedule(self) -> list[float]:
        """Centre timestamps the run will visit, one per iteration."""
        n = self.config.max_iterations
        if self.config.uniform_sampling:
            return [uniform_timestamp(i, n, self.duration) for i in range(1, n + 1)]
        return list(self.retriever_picks[:n])

    def hit_iteration(self) -> int | None:
        """First iteration whose memory holds the fact, from the schedule alone."""
        if self.fact_second is None:
            return None
        for i, t in enumerate(self.schedule(), start=1):
            if nearest_second(t) == self.fact_second:
                return i
        return None

    def check_consistent(self) -> None:
        """Reject schedules where the fact leaks through a caption before it is meant to."""
        cfg = self.config
        if not cfg.uniform_sampling and len(self.retriever_picks) < cfg.max_iterations:
            raise ValueError(f"{self.id}: need {cfg.max_iterations} retriever picks")
        if self.fact_second is None or not cfg.captions_only:
            return
        if self.fact_second in map(nearest_second, sample_even(self.duration, cfg.memory_init_count)):
            raise ValueError(f"{self.id}: fact frame is captioned during memory initialisation")
        hit = self.hit_iteration() or cfg.max_iterations + 1
        for t in self.schedule()[: hit - 1]:
            window = expand_window(t, cfg.window_halfwidth, cfg.grid_step_seconds, self.duration)
            if self.fact_second in map(nearest_second, window):
                raise ValueError(f"{self.id}: fact frame is in a window before the planned hit")

    def expected(self) -> tuple[int, int, bool]:
        """(answer index, iteration count, forced flag) the run must produce."""
        hit = self.hit_iteration()
        n = self.config.max_iterations
        if hit is None:
            return self.guess_index, n, True
        return self.answer_index, hit, hit == n


def frame_bytes(scenario_id: str, second: int, text: str) -> bytes:
    seed = hashlib.sha256(f"{scenario_id}/{second}".encode()).digest()
    image = Image.new("RGB", (96, 64), tuple(seed[:3]))
    ImageDraw.Draw(image).text((4, 4), text[:20], fill=(255, 255, 255))
    buffer = io.BytesIO()
    image.save(buffer, format="JPEG", quality=85)
    return buffer.getvalue()


def write_frames(scenario: Scenario, frames_dir: Path) -> dict[int, bytes]:
    frames_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for second in range(scenario.duration + 1):
        label = scenario.fact if second == scenario.fact_second else f"t={second}"
        data = frame_bytes(scenario.id, second, label)
        (frames_dir / frame_filename(second)).write_bytes(data)
        written[second] = data
    return written


def scenario_script(scenario: Scenario, frames: dict[int, bytes]) -> dict[str, Any]:
    """Role fixtures for one scenario (see :class:`traveler.backends.ScriptedBackend`)."""
    captioner: dict[str, str] = {"*": GENERIC_CAPTION}
    vqa: dict[str, str] = {"*": GENERIC_ANSWER}
    if scenario.fact_second is not None:
        key = "image:" + stable_hash(frames[scenario.fact_second])
        if scenario.config.captions_only:
            captioner = {key: f"A child in a playground; {scenario.fact}.", **captioner}
        else:
            vqa = {key: f"In this frame {scenario.fact}.", **vqa}
    evaluator = {
        f"contains:{scenario.fact}": f"The memory states that {scenario.fact}.\nFinal Answer: {scenario.answer_index}",
        f"contains:{FORCED_MARKER}": f"Choosing the most plausible option.\nFinal Answer: {scenario.guess_index}",
        "*": CONTINUE_TEXT,
    }
    picks = [f"I will go to second {format_seconds(t)}." for t in scenario.retriever_picks]
    return {
        "planner": {"*": PLAN_TEXT},
        "retriever": picks,
        "extractor_qgen": {"*": QUESTIONS_TEXT},
        "extractor_vqa": vqa,
        "captioner": captioner,
        "evaluator": evaluator,
    }


def manifest_line(scenario: Scenario, frames_dir: str) -> dict[str, Any]:
    line: dict[str, Any] = {
        "id": scenario.id,
        "frames_dir": frames_dir,
        "duration_seconds": scenario.duration,
        "question": scenario.question,
        "choices": list(scenario.choices),
        "answer_index": scenario.answer_index,
    }
    if scenario.category:
        line["category"] = scenario.category
    return line


def build_suite(root: str | Path, scenarios: list[Scenario]) -> tuple[Path, Path]:
    """Write frames, ``manifest.jsonl`` and ``fixtures.json`` under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    fixtures: dict[str, Any] = {"scenarios": {}}
    lines = []
    for scenario in scenarios:
        scenario.check_consistent()
        frames = write_frames(scenario, root / "frames" / scenario.id)
        fixtures["scenarios"][scenario.id] = scenario_script(scenario, frames)
        lines.append(json.dumps(manifest_line(scenario, f"frames/{scenario.id}")))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    fixtures_path = root / "fixtures.json"
    fixtures_path.write_text(json.dumps(fixtures, indent=1), encoding="utf-8")
    return manifest, fixtures_path


CHOICES = (
    "to look at the sky",
    "to sit down again",
    "to wave at his mother",
    "to rest on the yellow object",
    "to get down the slide",
)
FACTS = ("the boy turns onto his stomach", "the boy holds a red kite", "the girl opens the window",
         "the dog jumps over the fence", "the man picks up a towel")
CATEGORIES = ("Causal", "Temporal", "Descriptive")


def standard_scenarios(n: int = 24, config: RunConfig | None = None) -> list[Scenario]:
    """``n`` varied scenarios: answers found at different iterations, and never-found (forced) cases."""
    base = config or RunConfig()
    scenarios = []
    for i in range(n):
        duration = 20 + (i * 7) % 41
        max_it = base.max_iterations
        # Retriever picks stay at least 2*w+1 apart so windows never overlap the fact early.
        spacing = 2 * base.window_halfwidth + 2
        picks = [float(3 + j * spacing) for j in range(max_it)]
        picks = [min(p, duration) for p in picks]
        kind = i % (max_it + 1)  # 0: never found, else found at iteration `kind`
        fact_second = None if kind == 0 else int(picks[kind - 1])
        scenarios.append(Scenario(
            id=f"s{i:03d}",
            duration=duration,
            question=f"Why did the child move in the middle of clip {i}?",
            choices=CHOICES,
            answer_index=(i * 3) % len(CHOICES),
            fact=FACTS[i % len(FACTS)] + f" (clue {i})",
            fact_second=fact_second,
            retriever_picks=picks,
            guess_index=(i * 3 + 1 + i % 2) % len(CHOICES),
            category=CATEGORIES[i % len(CATEGORIES)],
            config=replace(base),
        ))
    return scenarios
