"""HCI feature extraction and the UI change prediction index (UICPI)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from uiopt.ingest import ColumnMeta, EventKind, SessionRecord, apply_normalization, minmax_normalize

FEATURE_NAMES: tuple[str, ...] = (
    # click
    "click_rate_per_min",
    "click_depth_mean",
    "double_click_ratio",
    # scroll
    "scroll_rate_per_min",
    "max_scroll_depth_pct",
    "scroll_reversals",
    # mouse
    "mouse_path_px",
    "mouse_speed_px_s",
    "mouse_idle_ratio",
    # network
    "latency_mean_ms",
    "latency_var",
)

# Columns the behavior grouping emphasises.
GROUPING_FEATURES = ("scroll_rate_per_min", "click_depth_mean")

DOUBLE_CLICK_MS = 500
DOUBLE_CLICK_PX = 8.0
IDLE_GAP_MS = 2000
RAGE_WINDOW_MS = 1000
RAGE_RADIUS_PX = 32.0
RAGE_MIN_CLICKS = 3


@dataclass(frozen=True)
class FeatureVector:
    session_id: str
    values: np.ndarray  # normalized, ordered as FEATURE_NAMES
    raw: np.ndarray
    zero_duration: bool = False

    @property
    def click_features(self) -> np.ndarray:
        return self.values[0:3]

    @property
    def scroll_features(self) -> np.ndarray:
        return self.values[3:6]

    @property
    def mouse_features(self) -> np.ndarray:
        return self.values[6:9]

    @property
    def network_features(self) -> np.ndarray:
        return self.values[9:11]


@dataclass(frozen=True)
class InteractionMetrics:
    error_rate: float
    task_time: float
    drop_off_rate: float
    click_confusion_index: float

    def __post_init__(self) -> None:
        for name in ("error_rate", "task_time", "drop_off_rate", "click_confusion_index"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.error_rate, self.task_time, self.drop_off_rate, self.click_confusion_index])


@dataclass(frozen=True)
class UICPIWeights:
    v1: float = 0.25
    v2: float = 0.25
    v3: float = 0.25
    v4: float = 0.25

    def __post_init__(self) -> None:
        w = self.as_array()
        if np.any(w < 0):
            raise ValueError(f"UICPI weights must be non-negative: {w.tolist()}")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError(f"UICPI weights must sum to 1, got {math.fsum(w)!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.v1, self.v2, self.v3, self.v4], dtype=float)


def _clicks(record: SessionRecord):
    return [e for e in record.events if e.kind is EventKind.CLICK]


def raw_features(record: SessionRecord) -> tuple[np.ndarray, bool]:
    """Unnormalized feature values for one session and a zero-duration flag.

    Rates are per minute of session duration and are 0 when the duration is 0.
    Click depth is the scroll depth in effect when the click happened.
    """
    events = record.events
    duration_ms = record.duration_ms
    minutes = duration_ms / 60_000.0
    zero = duration_ms == 0

    clicks = _clicks(record)
    depth_now = 0.0
    click_depths = []
    for e in events:
        if e.kind is EventKind.SCROLL and e.scroll_depth_pct is not None:
            depth_now = e.scroll_depth_pct
        elif e.kind is EventKind.CLICK:
            click_depths.append(depth_now)
    doubles = 0
    for prev, cur in zip(clicks, clicks[1:]):
        if cur.timestamp_ms - prev.timestamp_ms <= DOUBLE_CLICK_MS:
            if None in (prev.x, prev.y, cur.x, cur.y) or math.hypot(cur.x - prev.x, cur.y - prev.y) <= DOUBLE_CLICK_PX:
                doubles += 1

    scrolls = [e for e in events if e.kind is EventKind.SCROLL]
    depths = [e.scroll_depth_pct for e in scrolls if e.scroll_depth_pct is not None]
    reversals = 0
    last_sign = 0
    for a, b in zip(depths, depths[1:]):
        sign = (b > a) - (b < a)
        if sign and last_sign and sign != last_sign:
            reversals += 1
        if sign:
            last_sign = sign

    track = [e for e in events if e.kind in (EventKind.MOUSE_MOVE, EventKind.CLICK) and e.x is not None and e.y is not None]
    path = sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(track, track[1:]))
    span_s = (track[-1].timestamp_ms - track[0].timestamp_ms) / 1000.0 if len(track) > 1 else 0.0
    speed = path / span_s if span_s > 0 else 0.0
    idle = sum(g for g in (b.timestamp_ms - a.timestamp_ms for a, b in zip(events, events[1:])) if g > IDLE_GAP_MS)
    idle_ratio = idle / duration_ms if duration_ms > 0 else 0.0

    latencies = np.array([e.latency_ms for e in events if e.latency_ms is not None], dtype=float)
    values = np.array(
        [
            len(clicks) / minutes if not zero else 0.0,
            float(np.mean(click_depths)) if click_depths else 0.0,
            doubles / len(clicks) if clicks else 0.0,
            len(scrolls) / minutes if not zero else 0.0,
            max(depths) if depths else 0.0,
            float(reversals),
            path,
            speed,
            idle_ratio,
            float(latencies.mean()) if latencies.size else 0.0,
            float(latencies.var()) if latencies.size > 1 else 0.0,
        ],
        dtype=float,
    )
    return values, zero


def fit_feature_meta(records: Sequence[SessionRecord]) -> list[ColumnMeta]:
    raw = np.array([raw_features(r)[0] for r in records], dtype=float)
    return minmax_normalize(raw, columns=FEATURE_NAMES).column_meta


def extract_features(records: Sequence[SessionRecord], column_meta: Sequence[ColumnMeta] | None = None) -> list[FeatureVector]:
    """One normalized :class:`FeatureVector` per record.

    When ``column_meta`` is omitted it is fitted on ``records``; otherwise the
    given ranges are applied and values clipped to [0, 1].
    """
    if not records:
        return []
    pairs = [raw_features(r) for r in records]
    raw = np.array([p[0] for p in pairs], dtype=float)
    if column_meta is None:
        column_meta = minmax_normalize(raw, columns=FEATURE_NAMES).column_meta
    if [m.name for m in column_meta] != list(FEATURE_NAMES):
        raise ValueError("column_meta does not describe the HCI feature columns")
    norm = apply_normalization(raw, column_meta)
    return [
        FeatureVector(session_id=r.session_id, values=norm[i], raw=raw[i], zero_duration=pairs[i][1])
        for i, r in enumerate(records)
    ]


def feature_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    return np.array([v.values for v in vectors], dtype=float).reshape(len(vectors), len(FEATURE_NAMES))


def grouping_weights(scale: float = 2.0) -> np.ndarray:
    w = np.ones(len(FEATURE_NAMES))
    for name in GROUPING_FEATURES:
        w[FEATURE_NAMES.index(name)] = scale
    return w


def rage_click_fraction(record: SessionRecord) -> float:
    """Fraction of clicks inside a burst of >= 3 clicks within 1 s and a 32 px radius.

    Each click anchors a window ``[t, t + 1000 ms]``; clicks in that window
    within 32 px of the anchor form a candidate burst. Clicks without
    coordinates never join a burst.
    """
    clicks = [c for c in _clicks(record)]
    if not clicks:
        return 0.0
    in_burst = [False] * len(clicks)
    for i, anchor in enumerate(clicks):
        if anchor.x is None or anchor.y is None:
            continue
        members = [
            j
            for j in range(i, len(clicks))
            if clicks[j].timestamp_ms - anchor.timestamp_ms <= RAGE_WINDOW_MS
            and clicks[j].x is not None
            and clicks[j].y is not None
            and math.hypot(clicks[j].x - anchor.x, clicks[j].y - anchor.y) <= RAGE_RADIUS_PX
        ]
        if len(members) >= RAGE_MIN_CLICKS:
            for j in members:
                in_burst[j] = True
    return sum(in_burst) / len(clicks)


def compute_interaction_metrics(record: SessionRecord, max_duration_ms: float | None = None) -> InteractionMetrics:
    """Error rate, task time, drop-off and click confusion for one session.

    ``max_duration_ms`` is the dataset-wide longest session; task time is the
    session duration divided by it (defaults to the record's own duration).
    """
    kinds = [e.kind for e in record.events]
    if max_duration_ms is None:
        max_duration_ms = record.duration_ms
    task_time = min(record.duration_ms / max_duration_ms, 1.0) if max_duration_ms > 0 else 0.0
    dropped = EventKind.TASK_ABANDON in kinds and EventKind.TASK_COMPLETE not in kinds
    return InteractionMetrics(
        error_rate=kinds.count(EventKind.ERROR) / len(kinds),
        task_time=task_time,
        drop_off_rate=1.0 if dropped else 0.0,
        click_confusion_index=rage_click_fraction(record),
    )


def dataset_interaction_metrics(records: Sequence[SessionRecord]) -> list[InteractionMetrics]:
    longest = max((r.duration_ms for r in records), default=0)
    return [compute_interaction_metrics(r, longest) for r in records]


def compute_uicpi(metrics: InteractionMetrics, weights: UICPIWeights | None = None) -> float:
    """Weighted sum ``v1*E + v2*T + v3*D + v4*C``, in [0, 1] for valid inputs."""
    weights = weights or UICPIWeights()
    return float(
        weights.v1 * metrics.error_rate
        + weights.v2 * metrics.task_time
        + weights.v3 * metrics.drop_off_rate
        + weights.v4 * metrics.click_confusion_index
    )


def export_features(vectors: Sequence[FeatureVector], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", *FEATURE_NAMES])
        for v in vectors:
            writer.writerow([v.session_id, *(repr(float(x)) for x in v.values)])


def load_features(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != FEATURE_NAMES:
            raise ValueError(f"{path}: unexpected feature header")
        rows = list(reader)
    ids = [r[0] for r in rows]
    matrix = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(FEATURE_NAMES))
    return ids, matrix
