"""Timestamp arithmetic and frame providers."""

from __future__ import annotations

import bisect
import math
import mimetypes
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .model import round_ts


class ProviderError(Exception):
    """A frame source could not be read."""


@dataclass(frozen=True)
class Frame:
    data: bytes
    timestamp: float
    mime: str = "image/jpeg"


class FrameProvider(Protocol):
    duration_seconds: float

    def resolve(self, t: float) -> Frame: ...


def clamp(t: float, duration: float) -> float:
    """Round to key precision, then clamp into ``[0, duration]`` (so rounding never overshoots the end)."""
    return min(max(round_ts(t), 0.0), duration)


def sample_even(duration: float, k: int) -> list[float]:
    """Timestamps at fractions i/(k-1) of the video; a single sample sits at the midpoint."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not duration > 0:
        raise ValueError("duration must be positive")
    if k == 1:
        return [clamp(duration / 2, duration)]
    return [clamp(duration * i / (k - 1), duration) for i in range(k)]


def expand_window(t: float, w: int, step: float, duration: float) -> list[float]:
    """Grid points ``t + j*step`` for ``j in [-w, w]``, clamped into the video, deduplicated and sorted."""
    if w < 0:
        raise ValueError("w must be >= 0")
    if not step > 0:
        raise ValueError("step must be positive")
    return sorted({clamp(t + j * step, duration) for j in range(-w, w + 1)})


def _nearest(sources: list[float], t: float) -> int:
    """Index of the source timestamp closest to ``t``; ties go to the earlier one."""
    i = bisect.bisect_left(sources, t)
    if i == 0:
        return 0
    if i == len(sources):
        return len(sources) - 1
    before, after = sources[i - 1], sources[i]
    return i if after - t < t - before else i - 1


_FRAME_NAME = re.compile(r"^(\d+(?:\.\d+)?)\.(jpe?g|png)$", re.IGNORECASE)


def frame_filename(seconds: float) -> str:
    return f"{seconds:.2f}.jpg"


class DirectoryFrameProvider:
    """Frames stored as ``<seconds>.jpg`` files (two decimals by convention) in one directory."""

    def __init__(self, directory: str | Path, duration_seconds: float | None = None) -> None:
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ProviderError(f"frames directory not found: {self.directory}")
        found: dict[float, Path] = {}
        for path in self.directory.iterdir():
            match = _FRAME_NAME.match(path.name)
            if match:
                found.setdefault(float(match.group(1)), path)
        if not found:
            raise ProviderError(f"no frame files in {self.directory}")
        self._timestamps = sorted(found)
        self._paths = [found[t] for t in self._timestamps]
        self.duration_seconds = duration_seconds if duration_seconds is not None else self._timestamps[-1]
        if not self.duration_seconds > 0:
            raise ProviderError(f"non-positive duration for {self.directory}")

    @property
    def timestamps(self) -> list[float]:
        return list(self._timestamps)

    def resolve(self, t: float) -> Frame:
        if not (math.isfinite(t) and 0 <= t <= self.duration_seconds):
            raise ValueError(f"timestamp {t!r} outside [0, {self.duration_seconds}]")
        i = _nearest(self._timestamps, t)
        path = self._paths[i]
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ProviderError(f"cannot read frame {path}: {exc}") from exc
        mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
        return Frame(data=data, timestamp=self._timestamps[i], mime=mime)


class VideoFileProvider:
    """Decode frames from a video file with OpenCV (``pip install artifact[video]``)."""

    def __init__(self, path: str | Path, duration_seconds: float | None = None) -> None:
        try:
            import cv2
        except ImportError as exc:  # pragma: no cover - depends on optional extra
            raise ProviderError("video decoding requires opencv-python-headless") from exc
        self._cv2 = cv2
        self.path = Path(path)
        capture = cv2.VideoCapture(str(self.path))
        if not capture.isOpened():
            raise ProviderError(f"cannot open video {self.path}")
        self.fps = capture.get(cv2.CAP_PROP_FPS) or 0.0
        self.frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT) or 0)
        capture.release()
        if self.fps <= 0 or self.frame_count <= 0:
            raise ProviderError(f"video {self.path} reports no frames")
        self.duration_seconds = duration_seconds or (self.frame_count - 1) / self.fps
        self._lock = threading.Lock()

    def resolve(self, t: float) -> Frame:
        if not (math.isfinite(t) and 0 <= t <= self.duration_seconds):
            raise ValueError(f"timestamp {t!r} outside [0, {self.duration_seconds}]")
        cv2 = self._cv2
        # Round half down so ties fall on the earlier frame.
        index = min(math.ceil(t * self.fps - 0.5), self.frame_count - 1)
        with self._lock:
            capture = cv2.VideoCapture(str(self.path))
            try:
                capture.set(cv2.CAP_PROP_POS_FRAMES, index)
                ok, image = capture.read()
            finally:
                capture.release()
        if not ok:
            raise ProviderError(f"cannot decode frame {index} of {self.path}")
        ok, encoded = cv2.imencode(".jpg", image)
        if not ok:
            raise ProviderError(f"cannot encode frame {index} of {self.path}")
        return Frame(data=encoded.tobytes(), timestamp=round_ts(index / self.fps))
