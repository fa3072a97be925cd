"""Session log parsing, raw feature matrix extraction and min-max normalization.

Log format is line-delimited JSON, one session per line::

    {"session_id": "s1", "device_class": "Desktop", "page_id": "home",
     "layout_descriptor": {"arrangement": "grid-a"},
     "events": [{"timestamp_ms": 0, "kind": "PageLoad", "viewport_w": 1280, ...}]}

Unknown keys are ignored. Lines that fail validation are skipped and counted.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "raw-v1"


class EventKind(str, Enum):
    CLICK = "Click"
    SCROLL = "Scroll"
    MOUSE_MOVE = "MouseMove"
    RESIZE = "Resize"
    TOUCH_GESTURE = "TouchGesture"
    PAGE_LOAD = "PageLoad"
    TASK_COMPLETE = "TaskComplete"
    TASK_ABANDON = "TaskAbandon"
    ERROR = "Error"


class DeviceClass(str, Enum):
    MOBILE = "Mobile"
    TABLET = "Tablet"
    DESKTOP = "Desktop"


@dataclass(frozen=True)
class SessionEvent:
    timestamp_ms: int
    kind: EventKind
    x: float | None = None
    y: float | None = None
    scroll_depth_pct: float | None = None
    viewport_w: int | None = None
    viewport_h: int | None = None
    latency_ms: float | None = None
    payload: str | None = None

    def __post_init__(self) -> None:
        if self.timestamp_ms < 0:
            raise ValueError(f"negative timestamp_ms: {self.timestamp_ms}")
        if self.scroll_depth_pct is not None and not 0.0 <= self.scroll_depth_pct <= 100.0:
            raise ValueError(f"scroll_depth_pct out of [0,100]: {self.scroll_depth_pct}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"timestamp_ms": self.timestamp_ms, "kind": self.kind.value}
        for name in ("x", "y", "scroll_depth_pct", "viewport_w", "viewport_h", "latency_ms", "payload"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    device_class: DeviceClass
    page_id: str
    events: tuple[SessionEvent, ...]
    layout_descriptor: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValueError("session_id must be non-empty")
        if not self.events:
            raise ValueError(f"session {self.session_id!r} has no events")

    @property
    def duration_ms(self) -> int:
        # timestamps are relative to session start
        return self.events[-1].timestamp_ms

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "device_class": self.device_class.value,
            "page_id": self.page_id,
            "layout_descriptor": self.layout_descriptor,
            "events": [e.to_dict() for e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class ParseResult:
    records: list[SessionRecord]
    skipped: int = 0
    errors: list[str] = field(default_factory=list)


def _opt_number(raw: dict[str, Any], key: str, kind: type = float) -> Any:
    value = raw.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{key} must be numeric, got {value!r}")
    return kind(value)


def event_from_dict(raw: dict[str, Any]) -> SessionEvent:
    if not isinstance(raw, dict):
        raise ValueError("event must be an object")
    ts = raw["timestamp_ms"]
    if isinstance(ts, bool) or not isinstance(ts, (int, float)) or int(ts) != ts:
        raise ValueError(f"timestamp_ms must be an integer, got {ts!r}")
    payload = raw.get("payload")
    return SessionEvent(
        timestamp_ms=int(ts),
        kind=EventKind(raw["kind"]),
        x=_opt_number(raw, "x"),
        y=_opt_number(raw, "y"),
        scroll_depth_pct=_opt_number(raw, "scroll_depth_pct"),
        viewport_w=_opt_number(raw, "viewport_w", int),
        viewport_h=_opt_number(raw, "viewport_h", int),
        latency_ms=_opt_number(raw, "latency_ms"),
        payload=None if payload is None else str(payload),
    )


def record_from_dict(raw: dict[str, Any]) -> SessionRecord:
    """Build a validated record; events are sorted by timestamp if needed."""
    if not isinstance(raw, dict):
        raise ValueError("record must be a JSON object")
    session_id = raw["session_id"]
    if not isinstance(session_id, str):
        raise ValueError("session_id must be a string")
    events = [event_from_dict(e) for e in raw["events"]]
    if any(b.timestamp_ms < a.timestamp_ms for a, b in zip(events, events[1:])):
        logger.warning("session %s: events out of order, sorting", session_id)
        events.sort(key=lambda e: e.timestamp_ms)
    layout = raw.get("layout_descriptor") or {}
    if not isinstance(layout, dict):
        raise ValueError("layout_descriptor must be an object")
    return SessionRecord(
        session_id=session_id,
        device_class=DeviceClass(raw["device_class"]),
        page_id=str(raw.get("page_id", "")),
        events=tuple(events),
        layout_descriptor=layout,
    )


def parse_session_log(stream: IO[bytes] | IO[str] | Iterable[bytes | str]) -> ParseResult:
    """Parse a line-delimited JSON session log.

    Malformed lines (bad JSON, missing fields, failed invariants, duplicate
    session ids) are skipped and counted. Blank lines are not records and are
    ignored. I/O errors from the stream propagate.
    """
    result = ParseResult(records=[])
    seen: set[str] = set()
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                result.skipped += 1
                result.errors.append(f"line {lineno}: {exc}")
                continue
        if not line.strip():
            continue
        try:
            record = record_from_dict(json.loads(line))
            if record.session_id in seen:
                raise ValueError(f"duplicate session_id {record.session_id!r}")
        except (ValueError, KeyError, TypeError) as exc:
            result.skipped += 1
            result.errors.append(f"line {lineno}: {exc!r}")
            logger.warning("skipping malformed line %d: %s", lineno, exc)
            continue
        seen.add(record.session_id)
        result.records.append(record)
    return result


def parse_session_files(paths: Sequence[str | Path]) -> ParseResult:
    """Parse several log files; output is ordered by file, then line."""
    merged = ParseResult(records=[])
    seen: set[str] = set()
    for path in paths:
        with open(path, "rb") as fh:
            part = parse_session_log(fh)
        for record in part.records:
            if record.session_id in seen:
                merged.skipped += 1
                merged.errors.append(f"{path}: duplicate session_id {record.session_id!r}")
                continue
            seen.add(record.session_id)
            merged.records.append(record)
        merged.skipped += part.skipped
        merged.errors.extend(f"{path}: {e}" for e in part.errors)
    return merged


def write_session_log(records: Iterable[SessionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


# Fixed column order of the raw matrix. Missing-value rules:
#   mean_latency_ms      mean over events carrying latency_ms, 0 if none do
#   max_scroll_depth_pct max over events carrying scroll_depth_pct, 0 if none
#   viewport_area_px     largest viewport_w * viewport_h seen, 0 if never reported
RAW_COLUMNS: tuple[str, ...] = (
    "session_duration_ms",
    "event_count",
    "click_count",
    "mean_latency_ms",
    "max_scroll_depth_pct",
    "viewport_area_px",
    "error_count",
    "task_completed",
    "device_mobile",
    "device_tablet",
    "device_desktop",
)


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    raw_min: float
    raw_max: float
    constant: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "raw_min": self.raw_min, "raw_max": self.raw_max, "constant": self.constant}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ColumnMeta:
        return cls(str(raw["name"]), float(raw["raw_min"]), float(raw["raw_max"]), bool(raw.get("constant", False)))


@dataclass
class RawMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    row_ids: list[str]


@dataclass
class NormalizedDataset:
    """Rows are sessions, every cell in [0, 1]."""

    matrix: np.ndarray
    column_meta: list[ColumnMeta]
    row_ids: list[str]
    schema_version: str = SCHEMA_VERSION

    @property
    def columns(self) -> list[str]:
        return [m.name for m in self.column_meta]

    def denormalize(self) -> np.ndarray:
        return denormalize(self.matrix, self.column_meta)


def raw_row(record: SessionRecord) -> list[float]:
    events = record.events
    latencies = [e.latency_ms for e in events if e.latency_ms is not None]
    depths = [e.scroll_depth_pct for e in events if e.scroll_depth_pct is not None]
    areas = [e.viewport_w * e.viewport_h for e in events if e.viewport_w is not None and e.viewport_h is not None]
    kinds = [e.kind for e in events]
    return [
        float(record.duration_ms),
        float(len(events)),
        float(kinds.count(EventKind.CLICK)),
        float(np.mean(latencies)) if latencies else 0.0,
        float(max(depths)) if depths else 0.0,
        float(max(areas)) if areas else 0.0,
        float(kinds.count(EventKind.ERROR)),
        1.0 if EventKind.TASK_COMPLETE in kinds else 0.0,
        1.0 if record.device_class is DeviceClass.MOBILE else 0.0,
        1.0 if record.device_class is DeviceClass.TABLET else 0.0,
        1.0 if record.device_class is DeviceClass.DESKTOP else 0.0,
    ]


def extract_raw_matrix(records: Sequence[SessionRecord]) -> RawMatrix:
    if not records:
        raise ValueError("empty dataset")
    values = np.array([raw_row(r) for r in records], dtype=float)
    return RawMatrix(values=values, columns=RAW_COLUMNS, row_ids=[r.session_id for r in records])


def minmax_normalize(
    raw: np.ndarray | RawMatrix,
    columns: Sequence[str] | None = None,
    row_ids: Sequence[str] | None = None,
) -> NormalizedDataset:
    """Column-wise ``(x - min) / (max - min)``.

    A constant column maps to zeros and is flagged ``constant`` in its meta.
    """
    if isinstance(raw, RawMatrix):
        columns = raw.columns if columns is None else columns
        row_ids = raw.row_ids if row_ids is None else row_ids
        raw = raw.values
    matrix = np.asarray(raw, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValueError("expected a 2-D matrix with at least one row")
    n_rows, n_cols = matrix.shape
    if columns is None:
        columns = [f"c{j}" for j in range(n_cols)]
    if len(columns) != n_cols:
        raise ValueError(f"{len(columns)} column names for {n_cols} columns")
    if row_ids is None:
        row_ids = [str(i) for i in range(n_rows)]
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    meta = [
        ColumnMeta(name, float(a), float(b), constant=bool(b == a))
        for name, a, b in zip(columns, lo, hi)
    ]
    return NormalizedDataset(matrix=apply_normalization(matrix, meta), column_meta=meta, row_ids=list(row_ids))


def apply_normalization(matrix: np.ndarray, meta: Sequence[ColumnMeta], clip: bool = True) -> np.ndarray:
    """Normalize with stored min/max, e.g. new sessions against a fitted dataset."""
    matrix = np.asarray(matrix, dtype=float)
    lo = np.array([m.raw_min for m in meta])
    span = np.array([m.raw_max - m.raw_min for m in meta])
    constant = span == 0
    out = (matrix - lo) / np.where(constant, 1.0, span)
    out[:, constant] = 0.0
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def denormalize(matrix: np.ndarray, meta: Sequence[ColumnMeta]) -> np.ndarray:
    """Inverse map. Constant columns come back as their single raw value."""
    matrix = np.asarray(matrix, dtype=float)
    lo = np.array([m.raw_min for m in meta])
    span = np.array([m.raw_max - m.raw_min for m in meta])
    return matrix * span + lo


def export_normalized(dataset: NormalizedDataset, csv_path: str | Path) -> Path:
    """Write the matrix as CSV plus a ``<stem>.meta.json`` sidecar. Returns the sidecar path."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", *dataset.columns])
        for rid, row in zip(dataset.row_ids, dataset.matrix):
            writer.writerow([rid, *(repr(float(v)) for v in row)])
    sidecar = csv_path.with_suffix(".meta.json")
    sidecar.write_text(
        json.dumps(
            {"schema_version": dataset.schema_version, "columns": [m.to_dict() for m in dataset.column_meta]},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return sidecar


def load_normalized(csv_path: str | Path) -> NormalizedDataset:
    csv_path = Path(csv_path)
    meta_doc = json.loads(csv_path.with_suffix(".meta.json").read_text(encoding="utf-8"))
    meta = [ColumnMeta.from_dict(m) for m in meta_doc["columns"]]
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[1:] != [m.name for m in meta]:
            raise ValueError("CSV header does not match sidecar column_meta")
        rows = list(reader)
    matrix = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(meta))
    return NormalizedDataset(
        matrix=matrix,
        column_meta=meta,
        row_ids=[r[0] for r in rows],
        schema_version=meta_doc.get("schema_version", SCHEMA_VERSION),
    )
