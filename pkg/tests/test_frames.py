from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from traveler.frames import DirectoryFrameProvider, ProviderError, expand_window, frame_filename, sample_even


@pytest.mark.parametrize("duration,k,expected", [
    (44, 5, [0, 11, 22, 33, 44]),
    (44, 1, [22]),
    (10, 3, [0, 5, 10]),
    (23, 2, [0, 23]),
])
def test_sample_even(duration, k, expected) -> None:
    assert sample_even(duration, k) == expected


@given(st.floats(0.01, 3600), st.integers(1, 50))
def test_sample_even_properties(duration, k) -> None:
    ts = sample_even(duration, k)
    assert len(ts) == k
    assert ts == sorted(ts)
    assert all(0 <= t <= duration for t in ts)
    if k >= 2:
        assert ts[0] == 0 and ts[-1] == min(round(duration, 3), duration)


@pytest.mark.parametrize("t,w,expected", [
    (10.0, 2, [8, 9, 10, 11, 12]),
    (0.5, 2, [0, 0.5, 1.5, 2.5]),
    (43.5, 2, [41.5, 42.5, 43.5, 44]),
    (10.0, 0, [10]),
])
def test_expand_window(t, w, expected) -> None:
    assert expand_window(t, w, 1.0, 44) == expected


def test_expand_window_rejects_bad_arguments() -> None:
    with pytest.raises(ValueError):
        expand_window(1.0, -1, 1.0, 10)
    with pytest.raises(ValueError):
        expand_window(1.0, 1, 0.0, 10)


def check_window(t: float, w: int, step: float, duration: float) -> None:
    out = expand_window(t, w, step, duration)
    assert out == sorted(set(out))
    assert all(0 <= x <= duration for x in out)
    assert len(out) <= 2 * w + 1
    assert min(max(round(t, 3), 0.0), duration) in out


@given(st.floats(-50, 500), st.integers(0, 10), st.floats(0.05, 10), st.floats(0.5, 400))
def test_expand_window_properties(t, w, step, duration) -> None:
    check_window(t, w, step, duration)


def test_expand_window_properties_bulk() -> None:
    rng = random.Random(7)
    for _ in range(10_000):
        check_window(rng.uniform(-20, 200), rng.randint(0, 6), rng.uniform(0.1, 5), rng.uniform(0.5, 180))


@pytest.fixture
def provider(frames_dir: Path) -> DirectoryFrameProvider:
    return DirectoryFrameProvider(frames_dir, 44.0)


@pytest.mark.parametrize("t,source", [(11.4, 11), (11.5, 11), (11.51, 12), (0.0, 0), (44.0, 44), (0.49, 0)])
def test_resolve_nearest_with_ties_to_earlier(provider, t, source) -> None:
    frame = provider.resolve(t)
    assert frame.timestamp == source
    assert frame.data == f"frame-{source}".encode()
    assert frame.mime == "image/jpeg"


def test_resolve_sparse_directory(tmp_path: Path) -> None:
    for s in (0.0, 2.5, 10.0):
        (tmp_path / frame_filename(s)).write_bytes(b"x")
    provider = DirectoryFrameProvider(tmp_path)
    assert provider.duration_seconds == 10.0
    assert provider.timestamps == [0.0, 2.5, 10.0]
    assert provider.resolve(6.25).timestamp == 2.5  # tie
    assert provider.resolve(6.3).timestamp == 10.0


@pytest.fixture(scope="module")
def shared_provider(tmp_path_factory) -> DirectoryFrameProvider:
    d = tmp_path_factory.mktemp("frames")
    for s in range(45):
        (d / frame_filename(s)).write_bytes(f"frame-{s}".encode())
    return DirectoryFrameProvider(d, 44.0)


@given(t1=st.floats(0, 44), t2=st.floats(0, 44))
def test_resolve_deterministic(shared_provider, t1, t2) -> None:
    a, b = shared_provider.resolve(t1), shared_provider.resolve(t2)
    if a.timestamp == b.timestamp:
        assert a == b


def test_missing_file_names_path(provider, frames_dir: Path) -> None:
    (frames_dir / frame_filename(11)).unlink()
    with pytest.raises(ProviderError, match="11.00.jpg"):
        provider.resolve(11.2)


def test_resolve_out_of_range(provider) -> None:
    with pytest.raises(ValueError):
        provider.resolve(44.5)
    with pytest.raises(ValueError):
        provider.resolve(-0.1)


def test_missing_directory(tmp_path: Path) -> None:
    with pytest.raises(ProviderError):
        DirectoryFrameProvider(tmp_path / "nope")
    with pytest.raises(ProviderError):
        DirectoryFrameProvider(tmp_path)  # exists but empty


def test_ignores_unrelated_files(frames_dir: Path) -> None:
    (frames_dir / "notes.txt").write_text("x")
    (frames_dir / "cover.jpg").write_bytes(b"x")
    assert len(DirectoryFrameProvider(frames_dir).timestamps) == 45


def test_video_file_provider(tmp_path: Path) -> None:
    cv2 = pytest.importorskip("cv2")
    import numpy as np

    from traveler.frames import VideoFileProvider

    path = tmp_path / "clip.avi"
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 2.0, (32, 24))
    for i in range(10):
        writer.write(np.full((24, 32, 3), i * 25, dtype=np.uint8))
    writer.release()
    provider = VideoFileProvider(path)
    assert provider.duration_seconds == pytest.approx(4.5)
    assert provider.resolve(1.25).timestamp == 1.0  # frames every 0.5 s, tie goes earlier
    assert provider.resolve(1.3).timestamp == 1.5
    frame = provider.resolve(4.5)
    assert frame.data[:2] == b"\xff\xd8"
