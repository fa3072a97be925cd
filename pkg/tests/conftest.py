from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from uiopt.classifier import ClassifierInput
from uiopt.ingest import DeviceClass, EventKind, SessionEvent, SessionRecord

DATA = Path(__file__).parent / "data"

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE: list[str] = []


def make_record(events, session_id: str = "s1", device: DeviceClass = DeviceClass.DESKTOP) -> SessionRecord:
    """``events``: tuples ``(timestamp_ms, kind, **fields)`` given as (t, kind, dict)."""
    built = []
    for item in events:
        t, kind, *rest = item
        fields = rest[0] if rest else {}
        built.append(SessionEvent(t, EventKind(kind), **fields))
    return SessionRecord(session_id, device, "home", tuple(built))


@pytest.fixture
def data_dir() -> Path:
    return DATA


def two_blobs(seed: int, dim: int = 10, n_each: int = 20, gap: float = 12.0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    shift = np.zeros(dim)
    shift[0] = gap
    pts = np.vstack([rng.normal(0, 1, (n_each, dim)), rng.normal(0, 1, (n_each, dim)) + shift])
    return pts, np.repeat([0, 1], n_each)


def separable_dataset(seed: int = 0, n: int = 300, steps: int = 6) -> tuple[list[ClassifierInput], np.ndarray]:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    rng.shuffle(y)
    centers = np.array([[0.2, 0.8, 0.2, 0.5], [0.5, 0.2, 0.8, 0.5], [0.8, 0.5, 0.5, 0.2]])
    return [ClassifierInput(np.clip(centers[k] + rng.normal(0, 0.08, (steps, 4)), 0, 1)) for k in y], y


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
