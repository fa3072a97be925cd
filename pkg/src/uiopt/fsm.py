"""Cross-device responsiveness as a finite state machine over layout states.

Each accepted transition carries an exponential continuous coverage weight
``1 - exp(-j * tau)`` where ``tau`` is the number of accepted transitions so
far in the trace. Events without a matching rule are recorded as REJECTED
and leave the state unchanged.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from uiopt.ingest import DeviceClass, EventKind, SessionRecord

REJECTED = "REJECTED"
FRICTION_WINDOW_MS = 2000

DEFAULT_START_WIDTH = {DeviceClass.MOBILE: 390, DeviceClass.TABLET: 820, DeviceClass.DESKTOP: 1280}


class TriggerKind(str, Enum):
    MOUSE_EVENT = "MouseEvent"
    SCREEN_SIZE_CHANGE = "ScreenSizeChange"
    TOUCH_GESTURE = "TouchGesture"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class LayoutState:
    id: int
    name: str
    min_width: float
    max_width: float = math.inf  # exclusive

    def contains(self, width: float) -> bool:
        return self.min_width <= width < self.max_width


@dataclass(frozen=True)
class TriggerEvent:
    kind: TriggerKind
    timestamp_ms: int
    new_width: float | None = None

    def __post_init__(self) -> None:
        if self.kind is TriggerKind.SCREEN_SIZE_CHANGE and (self.new_width is None or self.new_width <= 0):
            raise ValueError("ScreenSizeChange needs new_width > 0")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "timestamp_ms": self.timestamp_ms}
        if self.new_width is not None:
            out["new_width"] = self.new_width
        return out


@dataclass(frozen=True)
class TransitionRule:
    from_state: int
    kind: TriggerKind
    to_state: int
    guard: tuple[float, float] | None = None  # [lo, hi) on new_width; None matches any event

    def matches(self, state: int, event: TriggerEvent) -> bool:
        if state != self.from_state or event.kind is not self.kind:
            return False
        if self.guard is None:
            return True
        return event.new_width is not None and self.guard[0] <= event.new_width < self.guard[1]


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Machine:
    states: tuple[LayoutState, ...]
    rules: tuple[TransitionRule, ...]
    j_param: float = 0.5

    def __post_init__(self) -> None:
        if self.j_param <= 0:
            raise ConfigurationError("j_param must be positive")
        ids = [s.id for s in self.states]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate state ids")
        ranges = sorted((s.min_width, s.max_width) for s in self.states)
        if not ranges or ranges[0][0] != 0 or ranges[-1][1] != math.inf:
            raise ConfigurationError("breakpoint ranges must cover [0, inf)")
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            if hi != lo:
                raise ConfigurationError("breakpoint ranges must be disjoint and contiguous")
        known = set(ids)
        for r in self.rules:
            if r.from_state not in known or r.to_state not in known:
                raise ConfigurationError(f"rule references unknown state: {r}")
        by_key: dict[tuple[int, TriggerKind], list[TransitionRule]] = {}
        for r in self.rules:
            by_key.setdefault((r.from_state, r.kind), []).append(r)
        for key, rules in by_key.items():
            if len(rules) > 1 and any(r.guard is None for r in rules):
                raise ConfigurationError(f"non-deterministic rules for {key}")
            guards = sorted(r.guard for r in rules if r.guard is not None)
            for (_, hi), (lo, _) in zip(guards, guards[1:]):
                if lo < hi:
                    raise ConfigurationError(f"overlapping guards for {key}")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state(self, state_id: int) -> LayoutState:
        for s in self.states:
            if s.id == state_id:
                return s
        raise ConfigurationError(f"unknown state id {state_id}")

    def state_for_width(self, width: float) -> LayoutState:
        for s in self.states:
            if s.contains(width):
                return s
        raise ConfigurationError(f"no state covers width {width}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "j_param": self.j_param,
            "states": [
                {"id": s.id, "name": s.name, "min_width": s.min_width, "max_width": None if s.max_width == math.inf else s.max_width}
                for s in self.states
            ],
            "rules": [
                {
                    "from": r.from_state,
                    "kind": r.kind.value,
                    "to": r.to_state,
                    "guard": None if r.guard is None else [r.guard[0], None if r.guard[1] == math.inf else r.guard[1]],
                }
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> Machine:
        states = tuple(
            LayoutState(
                id=int(s["id"]),
                name=str(s["name"]),
                min_width=float(s["min_width"]),
                max_width=math.inf if s.get("max_width") is None else float(s["max_width"]),
            )
            for s in raw["states"]
        )
        rules = []
        for r in raw["rules"]:
            guard = r.get("guard")
            if guard is not None:
                guard = (float(guard[0]), math.inf if guard[1] is None else float(guard[1]))
            rules.append(TransitionRule(int(r["from"]), TriggerKind(r["kind"]), int(r["to"]), guard))
        return cls(states=states, rules=tuple(rules), j_param=float(raw.get("j_param", 0.5)))


def load_machine(path: str | Path) -> Machine:
    return Machine.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_machine(j_param: float = 0.5) -> Machine:
    """Mobile [0, 768), tablet [768, 1024), desktop [1024, inf).

    Resizes move to whichever layout contains the new width (a resize inside
    the current range is a self-transition). Mouse events are accepted on
    tablet and desktop, touch gestures on mobile and tablet, timeouts
    everywhere; everything else is rejected.
    """
    states = (
        LayoutState(0, "mobile", 0, 768),
        LayoutState(1, "tablet", 768, 1024),
        LayoutState(2, "desktop", 1024, math.inf),
    )
    rules = []
    for s in states:
        for t in states:
            rules.append(TransitionRule(s.id, TriggerKind.SCREEN_SIZE_CHANGE, t.id, (t.min_width, t.max_width)))
        rules.append(TransitionRule(s.id, TriggerKind.TIMEOUT, s.id))
    for sid in (1, 2):
        rules.append(TransitionRule(sid, TriggerKind.MOUSE_EVENT, sid))
    for sid in (0, 1):
        rules.append(TransitionRule(sid, TriggerKind.TOUCH_GESTURE, sid))
    return Machine(states=states, rules=tuple(rules), j_param=j_param)


def ecc(tau: float, j_param: float) -> float:
    """Exponential continuous coverage ``1 - exp(-j * tau)``, in [0, 1)."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    if j_param <= 0:
        raise ValueError(f"j_param must be positive, got {j_param}")
    return -math.expm1(-j_param * tau)


@dataclass(frozen=True)
class TraceEntry:
    timestamp_ms: int
    from_state: int
    event: TriggerEvent
    to_state: int | None  # None: REJECTED
    ecc_weight: float
    dwell_ms: int

    @property
    def accepted(self) -> bool:
        return self.to_state is not None

    @property
    def resulting_state(self) -> int:
        return self.from_state if self.to_state is None else self.to_state

    def to_dict(self) -> dict[str, Any]:
        return {
            "timestamp_ms": self.timestamp_ms,
            "from_state": self.from_state,
            "event": self.event.to_dict(),
            "to_state": REJECTED if self.to_state is None else self.to_state,
            "ecc_weight": self.ecc_weight,
            "dwell_ms": self.dwell_ms,
        }


@dataclass
class TraceLog:
    session_id: str
    start_state: int
    final_state: int
    entries: list[TraceEntry] = field(default_factory=list)

    def check_chain(self) -> bool:
        state = self.start_state
        for e in self.entries:
            if e.from_state != state:
                return False
            state = e.resulting_state
        return state == self.final_state

    def visited_states(self) -> list[int]:
        seq = [self.start_state]
        for e in self.entries:
            if e.accepted and e.to_state != seq[-1]:
                seq.append(e.to_state)
        return seq

    def loop_count(self) -> int:
        """Returns to an already visited state (self-transitions excluded)."""
        seen = {self.start_state}
        loops = 0
        for s in self.visited_states()[1:]:
            if s in seen:
                loops += 1
            seen.add(s)
        return loops

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "start_state": self.start_state,
            "final_state": self.final_state,
            "entries": [e.to_dict() for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def step(
    machine: Machine,
    current_state: int,
    event: TriggerEvent,
    accepted_so_far: int = 0,
    entered_at_ms: int = 0,
) -> tuple[int | None, TraceEntry]:
    """Apply one event. Returns ``(next_state or None for REJECTED, entry)``."""
    machine.state(current_state)
    matching = [r for r in machine.rules if r.matches(current_state, event)]
    if len(matching) > 1:
        raise ConfigurationError(f"{len(matching)} rules match state {current_state} / {event.kind.value}")
    if matching:
        nxt: int | None = matching[0].to_state
        weight = ecc(accepted_so_far + 1, machine.j_param)
    else:
        nxt = None
        weight = ecc(accepted_so_far, machine.j_param)
    entry = TraceEntry(
        timestamp_ms=event.timestamp_ms,
        from_state=current_state,
        event=event,
        to_state=nxt,
        ecc_weight=weight,
        dwell_ms=event.timestamp_ms - entered_at_ms,
    )
    return nxt, entry


def run_trace(machine: Machine, events: Sequence[TriggerEvent], start_width: float, session_id: str = "") -> TraceLog:
    if any(b.timestamp_ms < a.timestamp_ms for a, b in zip(events, events[1:])):
        raise ValueError("events must be time-ordered")
    start = machine.state_for_width(start_width).id
    trace = TraceLog(session_id=session_id, start_state=start, final_state=start)
    state, accepted, entered_at = start, 0, events[0].timestamp_ms if events else 0
    for ev in events:
        nxt, entry = step(machine, state, ev, accepted, entered_at)
        trace.entries.append(entry)
        if nxt is not None:
            accepted += 1
            if nxt != state:
                entered_at = ev.timestamp_ms
            state = nxt
    trace.final_state = state
    return trace


_TRIGGER_MAP = {
    EventKind.RESIZE: TriggerKind.SCREEN_SIZE_CHANGE,
    EventKind.CLICK: TriggerKind.MOUSE_EVENT,
    EventKind.MOUSE_MOVE: TriggerKind.MOUSE_EVENT,
    EventKind.TOUCH_GESTURE: TriggerKind.TOUCH_GESTURE,
}


def session_triggers(record: SessionRecord) -> tuple[list[TriggerEvent], float]:
    """Map a session onto machine inputs and pick its starting width.

    Clicks on mobile and tablet devices are taps and count as touch gestures.
    """
    start_width: float | None = None
    triggers = []
    touch = record.device_class in (DeviceClass.MOBILE, DeviceClass.TABLET)
    for e in record.events:
        if start_width is None and e.kind is not EventKind.RESIZE and e.viewport_w:
            start_width = float(e.viewport_w)
        kind = TriggerKind.TOUCH_GESTURE if touch and e.kind is EventKind.CLICK else _TRIGGER_MAP.get(e.kind)
        if kind is None:
            continue
        if kind is TriggerKind.SCREEN_SIZE_CHANGE:
            if not e.viewport_w:
                continue
            triggers.append(TriggerEvent(kind, e.timestamp_ms, float(e.viewport_w)))
        else:
            triggers.append(TriggerEvent(kind, e.timestamp_ms))
    if start_width is None:
        start_width = DEFAULT_START_WIDTH[record.device_class]
    return triggers, start_width


def trace_session(machine: Machine, record: SessionRecord) -> TraceLog:
    triggers, width = session_triggers(record)
    return run_trace(machine, triggers, width, session_id=record.session_id)


@dataclass
class LayoutStats:
    task_success_rate: float
    friction_count: int
    mean_dwell_ms: float
    outcomes: int
    weighted_friction: float

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class TransitionStats:
    attempts: int = 0
    rejections: int = 0
    followed_by_failure: int = 0

    @property
    def friction(self) -> int:
        return self.rejections + self.followed_by_failure

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempts": self.attempts,
            "rejections": self.rejections,
            "followed_by_failure": self.followed_by_failure,
            "friction": self.friction,
        }


@dataclass
class CRAssessment:
    per_layout: dict[str, LayoutStats]
    per_transition: dict[str, TransitionStats]
    state_coverage_pct: float
    transition_efficiency_pct: float
    loop_detection_rate_pct: float | None
    loops_per_trace: list[int]
    accepted: int
    rejected: int
    mean_ecc: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_layout": {k: v.to_dict() for k, v in self.per_layout.items()},
            "per_transition": {k: v.to_dict() for k, v in self.per_transition.items()},
            "state_coverage_pct": self.state_coverage_pct,
            "transition_efficiency_pct": self.transition_efficiency_pct,
            "loop_detection_rate_pct": self.loop_detection_rate_pct,
            "loops_per_trace": list(self.loops_per_trace),
            "accepted": self.accepted,
            "rejected": self.rejected,
            "mean_ecc": dict(self.mean_ecc),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _state_at(trace: TraceLog, t: int) -> int:
    state = trace.start_state
    for e in trace.entries:
        if e.timestamp_ms > t:
            break
        state = e.resulting_state
    return state


def assess(
    traces: Sequence[TraceLog],
    machine: Machine,
    outcomes: Mapping[str, Sequence[tuple[int, EventKind]]] | None = None,
    ground_truth_loops: Mapping[str, int] | None = None,
) -> CRAssessment:
    """Fold traces into per-layout, per-transition and global metrics.

    ``outcomes`` maps a session id to its ``(timestamp_ms, kind)`` outcome
    events (TaskComplete, TaskAbandon, Error). A transition counts as friction
    when it is rejected or when a TaskAbandon/Error follows within 2 s.
    ``ground_truth_loops`` enables the loop detection rate; without it the
    rate is ``None`` and only ``loops_per_trace`` is reported.
    """
    if not traces:
        raise ValueError("no traces to assess")
    outcomes = outcomes or {}
    names = {s.id: s.name for s in machine.states}
    visited: set[int] = set()
    per_transition: dict[str, TransitionStats] = {}
    friction = Counter()
    wfriction: Counter = Counter()
    dwell: dict[int, list[int]] = {s.id: [] for s in machine.states}
    success = Counter()
    total_outcomes = Counter()
    ecc_sum: Counter = Counter()
    ecc_n = Counter()
    accepted = rejected = 0
    loops = []

    for tr in traces:
        visited.update(tr.visited_states())
        loops.append(tr.loop_count())
        failures = [t for t, k in outcomes.get(tr.session_id, ()) if k in (EventKind.TASK_ABANDON, EventKind.ERROR)]
        for e in tr.entries:
            key = f"{names[e.from_state]}:{e.event.kind.value}"
            stats = per_transition.setdefault(key, TransitionStats())
            stats.attempts += 1
            if e.accepted:
                accepted += 1
                ecc_sum[e.to_state] += e.ecc_weight
                ecc_n[e.to_state] += 1
                if any(e.timestamp_ms <= t <= e.timestamp_ms + FRICTION_WINDOW_MS for t in failures):
                    stats.followed_by_failure += 1
                    friction[e.to_state] += 1
                    wfriction[e.to_state] += e.ecc_weight
            else:
                rejected += 1
                stats.rejections += 1
                friction[e.from_state] += 1
                wfriction[e.from_state] += e.ecc_weight
        # dwell segments: time from entering a layout until leaving it (or the last entry)
        state, since = tr.start_state, tr.entries[0].timestamp_ms if tr.entries else 0
        for e in tr.entries:
            if e.accepted and e.to_state != state:
                dwell[state].append(e.timestamp_ms - since)
                state, since = e.to_state, e.timestamp_ms
        end = tr.entries[-1].timestamp_ms if tr.entries else since
        dwell[state].append(end - since)
        for t, k in outcomes.get(tr.session_id, ()):
            if k in (EventKind.TASK_COMPLETE, EventKind.TASK_ABANDON):
                s = _state_at(tr, t)
                total_outcomes[s] += 1
                if k is EventKind.TASK_COMPLETE:
                    success[s] += 1

    per_layout = {}
    for s in machine.states:
        n_out = total_outcomes[s.id]
        per_layout[s.name] = LayoutStats(
            task_success_rate=success[s.id] / n_out if n_out else 0.0,
            friction_count=int(friction[s.id]),
            mean_dwell_ms=float(sum(dwell[s.id]) / len(dwell[s.id])) if dwell[s.id] else 0.0,
            outcomes=int(n_out),
            weighted_friction=float(wfriction[s.id]),
        )
    attempted = accepted + rejected
    loop_rate = None
    if ground_truth_loops is not None:
        truth = [int(ground_truth_loops.get(tr.session_id, 0)) for tr in traces]
        hits = sum(min(d, t) for d, t in zip(loops, truth))
        loop_rate = 100.0 * hits / sum(truth) if sum(truth) else 100.0
    return CRAssessment(
        per_layout=per_layout,
        per_transition=dict(sorted(per_transition.items())),
        state_coverage_pct=100.0 * len(visited) / machine.n_states,
        transition_efficiency_pct=100.0 * accepted / attempted if attempted else 100.0,
        loop_detection_rate_pct=loop_rate,
        loops_per_trace=loops,
        accepted=accepted,
        rejected=rejected,
        mean_ecc={names[s.id]: (ecc_sum[s.id] / ecc_n[s.id] if ecc_n[s.id] else 0.0) for s in machine.states},
    )


def session_outcomes(records: Iterable[SessionRecord]) -> dict[str, list[tuple[int, EventKind]]]:
    keep = (EventKind.TASK_COMPLETE, EventKind.TASK_ABANDON, EventKind.ERROR)
    return {r.session_id: [(e.timestamp_ms, e.kind) for e in r.events if e.kind in keep] for r in records}


def write_traces(traces: Iterable[TraceLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in traces:
            fh.write(tr.to_json() + "\n")


def trace_from_dict(raw: Mapping[str, Any]) -> TraceLog:
    entries = []
    for e in raw["entries"]:
        ev = e["event"]
        entries.append(
            TraceEntry(
                timestamp_ms=int(e["timestamp_ms"]),
                from_state=int(e["from_state"]),
                event=TriggerEvent(TriggerKind(ev["kind"]), int(ev["timestamp_ms"]), ev.get("new_width")),
                to_state=None if e["to_state"] == REJECTED else int(e["to_state"]),
                ecc_weight=float(e["ecc_weight"]),
                dwell_ms=int(e["dwell_ms"]),
            )
        )
    return TraceLog(
        session_id=str(raw["session_id"]),
        start_state=int(raw["start_state"]),
        final_state=int(raw["final_state"]),
        entries=entries,
    )


def read_traces(path: str | Path) -> list[TraceLog]:
    with open(path, encoding="utf-8") as fh:
        return [trace_from_dict(json.loads(line)) for line in fh if line.strip()]
