from __future__ import annotations

from pathlib import Path

import pytest

from traveler.backends import BackendPool, ScriptedBackend
from traveler.frames import frame_filename
from traveler.model import Question

GOLDEN_DIR = Path(__file__).parent / "golden"

_acceptance: dict[str, list[str]] = {}
_RANK = {"failed": 2, "skipped": 1, "passed": 0}


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1].split("[")[0]
        _acceptance.setdefault(name, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    """One line per acceptance criterion; parametrized cases collapse to their worst outcome."""
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in sorted(_acceptance.items(), key=lambda kv: int(kv[0].split("_")[2])):
        worst = max(outcomes, key=_RANK.__getitem__)
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[worst]
        number = name.split("_")[2]
        terminalreporter.write_line(f"criterion {number}: {label}  {name} ({len(outcomes)} case(s))")


@pytest.fixture
def slide_question() -> Question:
    return Question(
        "Why did the boy turn over in the middle of the video?",
        ("to look at the sky", "to sit down", "to wave at his mother", "to rest on the yellow object",
         "to get down the slide"),
        answer_index=4,
        category="Causal",
    )


@pytest.fixture
def frames_dir(tmp_path: Path) -> Path:
    """44 one-second frames whose bytes encode their own timestamp."""
    d = tmp_path / "frames"
    d.mkdir()
    for s in range(45):
        (d / frame_filename(s)).write_bytes(f"frame-{s}".encode())
    return d


def scripted_pool(fixtures: dict, queue_capacity: int = 4, **kwargs) -> tuple[BackendPool, ScriptedBackend]:
    backend = ScriptedBackend(fixtures, **kwargs)
    return BackendPool(backend, backend, queue_capacity), backend
