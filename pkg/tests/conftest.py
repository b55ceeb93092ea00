from __future__ import annotations

import numpy as np
import pytest

from vitac.signal import FRAME_DIM, PushRecording


def make_recording(length=200, stop_index=100, label="obj", process_id=0, seed=0) -> PushRecording:
    """Recording whose frame t holds the value t in every channel (plus noise-free offsets)."""
    frames = np.arange(length, dtype=np.float64)[:, None] + np.linspace(0, 0.5, FRAME_DIM)[None, :]
    return PushRecording(frames, stop_index, label, process_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
