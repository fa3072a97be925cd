"""Seeded synthetic session generator with ground truth for tests and demos.

Three behavior archetypes differ in duration, event rates and friction.
Friction comes from three switches, each decided by comparing a pre-drawn
uniform with ``probability * friction_scale``:

* a pointer slot (mouse move or touch) becomes an Error event,
* a candidate click burst is tight (a rage burst) instead of spread out,
* the session ends in TaskAbandon instead of TaskComplete.

Because the uniforms, timestamps and event counts never depend on the
scale, lowering ``friction_scale`` can only lower error rate, click
confusion and drop-off, and leaves task time untouched. The feedback loop
relies on that.

Layout loops are injected as excursions: resize into another layout and
back to the starting width. Each session gets 0, 1 or 2 excursions, always
to distinct layouts, so the injected count equals the number of returns to
an already visited layout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from uiopt.ingest import DeviceClass, EventKind, SessionEvent, SessionRecord, write_session_log

ARCHETYPE_NAMES = ("fast_reader", "struggler", "explorer")

# Width ranges inside each default layout (mobile < 768 <= tablet < 1024 <= desktop).
_WIDTHS = {DeviceClass.MOBILE: (360, 430), DeviceClass.TABLET: (780, 1000), DeviceClass.DESKTOP: (1100, 1920)}
_LAYOUT_OF = {DeviceClass.MOBILE: 0, DeviceClass.TABLET: 1, DeviceClass.DESKTOP: 2}
_LAYOUT_DEVICE = {v: k for k, v in _LAYOUT_OF.items()}
_PAGES = ("home", "search", "product", "checkout")


@dataclass(frozen=True)
class Archetype:
    duration_s: tuple[float, float]
    clicks_per_min: tuple[float, float]
    scrolls_per_min: tuple[float, float]
    pointer_per_min: tuple[float, float]
    error_p: float  # per pointer slot
    rage_p: float  # per candidate burst
    abandon_p: float
    bursts: int
    latency_ms: tuple[float, float]


ARCHETYPES: dict[str, Archetype] = {
    "fast_reader": Archetype((20, 60), (3, 6), (25, 40), (20, 40), 0.01, 0.05, 0.05, 1, (60, 140)),
    "struggler": Archetype((150, 240), (12, 20), (4, 10), (30, 60), 0.30, 0.85, 0.80, 4, (300, 700)),
    "explorer": Archetype((70, 160), (6, 12), (12, 25), (40, 80), 0.05, 0.25, 0.25, 2, (120, 300)),
}


@dataclass(frozen=True)
class SyntheticProfile:
    n_sessions: int = 300
    device_mix: Mapping[str, float] = field(default_factory=lambda: {"Mobile": 0.35, "Tablet": 0.2, "Desktop": 0.45})
    archetype_mix: Mapping[str, float] = field(default_factory=lambda: {"fast_reader": 0.2, "struggler": 0.55, "explorer": 0.25})
    loop_mix: tuple[float, float, float] = (0.5, 0.3, 0.2)  # P(0), P(1), P(2) injected loops
    friction_scale: float = 1.0
    latency_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be at least 1")
        for name, mix, keys in (
            ("device_mix", self.device_mix, [d.value for d in DeviceClass]),
            ("archetype_mix", self.archetype_mix, list(ARCHETYPE_NAMES)),
        ):
            if set(mix) - set(keys):
                raise ValueError(f"{name}: unknown keys {sorted(set(mix) - set(keys))}")
            if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be non-negative and sum to 1")
        if len(self.loop_mix) != 3 or min(self.loop_mix) < 0 or abs(sum(self.loop_mix) - 1.0) > 1e-9:
            raise ValueError("loop_mix must be three probabilities summing to 1")
        if self.friction_scale < 0 or self.latency_scale < 0:
            raise ValueError("scales must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["device_mix"] = dict(self.device_mix)
        d["archetype_mix"] = dict(self.archetype_mix)
        d["loop_mix"] = list(self.loop_mix)
        return d

    @classmethod
    def from_dict(cls, raw: Mapping) -> SyntheticProfile:
        raw = dict(raw)
        if "loop_mix" in raw:
            raw["loop_mix"] = tuple(raw["loop_mix"])
        return cls(**raw)


@dataclass(frozen=True)
class SessionTruth:
    session_id: str
    archetype: str
    injected_loops: int


@dataclass
class SyntheticDataset:
    records: list[SessionRecord]
    truth: list[SessionTruth]

    def loops_by_session(self) -> dict[str, int]:
        return {t.session_id: t.injected_loops for t in self.truth}

    def write(self, log_path: str | Path, truth_path: str | Path | None = None) -> None:
        write_session_log(self.records, log_path)
        if truth_path is not None:
            with open(truth_path, "w", encoding="utf-8") as fh:
                for t in self.truth:
                    fh.write(json.dumps(asdict(t), sort_keys=True, separators=(",", ":")) + "\n")


def read_truth(path: str | Path) -> list[SessionTruth]:
    with open(path, encoding="utf-8") as fh:
        return [SessionTruth(**json.loads(line)) for line in fh if line.strip()]


def allocate(mix: Mapping[str, float], n: int, order: tuple[str, ...]) -> list[str]:
    """Exact counts by largest remainder (ties to ``order``), as a flat list."""
    quotas = {k: mix.get(k, 0.0) * n for k in order}
    counts = {k: int(np.floor(q)) for k, q in quotas.items()}
    leftover = n - sum(counts.values())
    by_remainder = sorted(order, key=lambda k: (-(quotas[k] - counts[k]), order.index(k)))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    return [k for k in order for _ in range(counts[k])]


def _session(index: int, archetype: str, device: DeviceClass, n_loops: int, profile: SyntheticProfile) -> SessionRecord:
    a = ARCHETYPES[archetype]
    rng = np.random.default_rng([profile.seed, index])
    duration = int(rng.uniform(*a.duration_s) * 1000)
    minutes = duration / 60_000
    width = int(rng.integers(*_WIDTHS[device]))
    height = int(width * rng.uniform(0.55, 1.9))
    latency_base = rng.uniform(*a.latency_ms)

    def latency() -> float:
        return round(latency_base * rng.uniform(0.7, 1.3) * profile.latency_scale, 1)

    def when(count: int) -> np.ndarray:
        return np.sort(rng.integers(1, max(duration - 1, 2), size=count))

    # (timestamp, order, event); order keeps ties stable
    events: list[tuple[int, int, SessionEvent]] = [(0, 0, SessionEvent(0, EventKind.PAGE_LOAD, viewport_w=width, viewport_h=height, latency_ms=latency()))]

    def add(ev: SessionEvent) -> None:
        events.append((ev.timestamp_ms, len(events), ev))

    for t in when(int(round(rng.uniform(*a.clicks_per_min) * minutes))):
        add(SessionEvent(int(t), EventKind.CLICK, x=round(rng.uniform(0, width), 1), y=round(rng.uniform(0, height), 1), latency_ms=latency()))

    depth = 0.0
    for t in when(int(round(rng.uniform(*a.scrolls_per_min) * minutes))):
        depth = float(np.clip(depth + rng.normal(8.0, 12.0), 0.0, 100.0))
        add(SessionEvent(int(t), EventKind.SCROLL, scroll_depth_pct=round(depth, 1)))

    pointer_kind = EventKind.MOUSE_MOVE if device is DeviceClass.DESKTOP else EventKind.TOUCH_GESTURE
    for t in when(int(round(rng.uniform(*a.pointer_per_min) * minutes))):
        x, y, u = round(rng.uniform(0, width), 1), round(rng.uniform(0, height), 1), rng.uniform()
        if u < a.error_p * profile.friction_scale:
            add(SessionEvent(int(t), EventKind.ERROR, payload="script-error"))
        else:
            add(SessionEvent(int(t), pointer_kind, x=x, y=y))

    for t in when(a.bursts):
        ax, ay = rng.uniform(40, max(width - 40, 41)), rng.uniform(40, max(height - 40, 41))
        tight = rng.uniform() < a.rage_p * profile.friction_scale
        spread = 8.0 if tight else 150.0
        for k in range(3):
            add(SessionEvent(int(t) + 250 * k, EventKind.CLICK, x=round(ax + spread * k, 1), y=round(ay, 1), latency_ms=latency()))

    # excursions to other layouts and back, evenly spaced
    home = _LAYOUT_OF[device]
    others = [l for l in (0, 1, 2) if l != home]
    targets = [others[j] for j in rng.permutation(2)[:n_loops]]
    for k, layout in enumerate(targets):
        t_out = int(duration * (k + 0.3) / (n_loops + 0.5))
        t_back = t_out + int(duration * 0.15 / (n_loops + 0.5))
        w_out = int(rng.integers(*_WIDTHS[_LAYOUT_DEVICE[layout]]))
        add(SessionEvent(t_out, EventKind.RESIZE, viewport_w=w_out, viewport_h=height))
        add(SessionEvent(t_back, EventKind.RESIZE, viewport_w=width, viewport_h=height))

    abandon = rng.uniform() < a.abandon_p * profile.friction_scale
    final = EventKind.TASK_ABANDON if abandon else EventKind.TASK_COMPLETE
    events.append((duration, len(events) + 10**6, SessionEvent(duration, final)))
    events.sort(key=lambda e: (e[0], e[1]))
    return SessionRecord(
        session_id=f"s{index:05d}",
        device_class=device,
        page_id=_PAGES[index % len(_PAGES)],
        events=tuple(e[2] for e in events),
        layout_descriptor={"arrangement": "grid-a", "breakpoints": [768, 1024]},
    )


def generate_synthetic_sessions(profile: SyntheticProfile) -> SyntheticDataset:
    """Deterministic for a given profile; archetype and device counts follow the mixes exactly."""
    rng = np.random.default_rng([profile.seed, 10**9])
    n = profile.n_sessions
    archetypes = allocate(profile.archetype_mix, n, ARCHETYPE_NAMES)
    devices = allocate(profile.device_mix, n, tuple(d.value for d in DeviceClass))
    archetypes = [archetypes[i] for i in rng.permutation(n)]
    devices = [devices[i] for i in rng.permutation(n)]
    loops = rng.choice(3, size=n, p=np.asarray(profile.loop_mix))
    records, truth = [], []
    for i in range(n):
        rec = _session(i, archetypes[i], DeviceClass(devices[i]), int(loops[i]), profile)
        records.append(rec)
        truth.append(SessionTruth(rec.session_id, archetypes[i], int(loops[i])))
    return SyntheticDataset(records, truth)
