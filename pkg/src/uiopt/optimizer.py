"""Quokka swarm search with a nonlinear difference term over UI parameters.

Each member is a point in the 4-dim UI space (font size, theme, letter
spacing, alignment). The search itself runs in the unit box, where every
coordinate is rescaled to [0, 1], so one step size suits all dimensions;
:class:`UICandidate` carries physical units.

One iteration, for every member in index order::

    alpha  = exp(-O * h) * (leader - member)          h = iteration / max_iterations
    Dh_new = (Tm + hm) / (0.8 + Dh) + iota * alpha     Tm ~ U(-1, 1), hm ~ U(0, 0.5)
    cand   = clamp(member + Dh_new * sigma)

Tm and hm are drawn per member and per dimension. Tm is signed so a step
can go either way; with a non-negative Tm every move would drift upward.
Then all candidates are scored and a member only moves if its candidate is
no worse. ``sigma`` decays geometrically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DIM_NAMES = ("font_size", "theme_mode", "letter_spacing", "text_alignment")
ALIGNMENTS = ("left", "center", "right", "justify")
THEMES = ("light", "dark")
DENOMINATOR_FLOOR = 1e-6
_ALIGN_TOP = math.nextafter(4.0, 0.0)


@dataclass(frozen=True)
class Bounds:
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.low) != len(self.high) or any(lo > hi for lo, hi in zip(self.low, self.high)):
            raise ValueError(f"invalid bounds {self.low} .. {self.high}")

    @property
    def span(self) -> np.ndarray:
        return np.asarray(self.high, dtype=float) - np.asarray(self.low, dtype=float)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(x, dtype=float) - self.low) / safe, 0.0)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(self.low, dtype=float) + np.asarray(u, dtype=float) * self.span


UI_BOUNDS = Bounds(low=(8.0, 0.0, 0.0, 0.0), high=(32.0, 1.0, 0.5, 4.0))


@dataclass(frozen=True)
class UICandidate:
    font_size: float
    theme_mode: float
    letter_spacing: float
    text_alignment: float

    def __post_init__(self) -> None:
        v = self.as_array()
        if np.any(v < np.array(UI_BOUNDS.low)) or np.any(v > np.array(UI_BOUNDS.high)) or self.text_alignment >= 4.0:
            raise ValueError(f"candidate out of bounds: {v.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.font_size, self.theme_mode, self.letter_spacing, self.text_alignment], dtype=float)

    @classmethod
    def from_array(cls, x: Sequence[float]) -> UICandidate:
        x = np.clip(np.asarray(x, dtype=float), UI_BOUNDS.low, UI_BOUNDS.high)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(min(x[3], _ALIGN_TOP)))

    @classmethod
    def from_unit(cls, u: Sequence[float]) -> UICandidate:
        return cls.from_array(UI_BOUNDS.from_unit(np.clip(u, 0.0, 1.0)))

    def to_unit(self) -> np.ndarray:
        return UI_BOUNDS.to_unit(self.as_array())

    @property
    def theme(self) -> str:
        return THEMES[int(self.theme_mode >= 0.5)]

    @property
    def alignment(self) -> str:
        return ALIGNMENTS[min(int(math.floor(self.text_alignment)), 3)]

    def decoded(self) -> dict:
        return {
            "font_size_px": self.font_size,
            "theme": self.theme,
            "letter_spacing_em": self.letter_spacing,
            "text_alignment": self.alignment,
            "raw": asdict(self),
        }


@dataclass(frozen=True)
class QndsoaConfig:
    population_size: int = 30
    max_iterations: int = 500
    sigma: float = 0.9
    sigma_decay: float = 0.995
    iota: float = 2.0
    O: float = 3.0
    temperature_low: float = -1.0  # Tm ~ U(temperature_low, temperature_high) per dimension
    temperature_high: float = 1.0
    humidity_high: float = 0.5  # hm ~ U(0, humidity_high) per dimension
    initial_drought: float = 1.0
    tolerance: float = 1e-12
    patience: int | None = None  # None runs every iteration

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError("sigma must lie in (0, 1]")
        if self.temperature_low > self.temperature_high or self.humidity_high < 0:
            raise ValueError("invalid temperature or humidity range")
        if self.iota <= 0 or self.O <= 0:
            raise ValueError("iota and O must be positive")
        if self.max_iterations < 0 or (self.patience is not None and self.patience < 1):
            raise ValueError("max_iterations must be >= 0 and patience >= 1")


def ndf(leader: np.ndarray, member: np.ndarray, O: float, h: float) -> np.ndarray:
    """Nonlinear difference ``exp(-O h) * (leader - member)``."""
    return math.exp(-O * h) * (np.asarray(leader, dtype=float) - np.asarray(member, dtype=float))


def update_drought(drought: np.ndarray, Tm, hm, iota: float, alpha: np.ndarray) -> np.ndarray:
    """``(Tm + hm) / (0.8 + Dh) + iota * alpha`` with the denominator floored at 1e-6."""
    denom = np.maximum(0.8 + np.asarray(drought, dtype=float), DENOMINATOR_FLOOR)
    return (Tm + hm) / denom + iota * np.asarray(alpha, dtype=float)


def update_position(member, drought_new: np.ndarray, sigma: float, bounds: Bounds | None = None):
    """``member + Dh_new * sigma`` clamped to ``bounds``.

    A :class:`UICandidate` is stepped in physical units against the UI
    bounds; a plain array against ``bounds`` (default: the unit box).
    """
    if isinstance(member, UICandidate):
        return UICandidate.from_array(member.as_array() + np.asarray(drought_new) * sigma)
    x = np.asarray(member, dtype=float) + np.asarray(drought_new, dtype=float) * sigma
    if bounds is None:
        return np.clip(x, 0.0, 1.0)
    return np.clip(x, bounds.low, bounds.high)


# Objectives take an (n, 4) array of unit-box points and return n fitness values.
Objective = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SphereObjective:
    center: float = 0.5

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return np.sum((np.atleast_2d(U) - self.center) ** 2, axis=1)


# Surrogate cost. With unit coordinates f (font), s (spacing), dark = theme >= 0.5,
# a = alignment index:
#   js_ms  = 40  + 200 (f - 0.40)^2 + 80 (s - 0.20)^2 + 6 [a == justify]
#   error  = 0.02 + 0.5 (f - 0.55)^2 + 0.8 (s - 0.30)^2 + 0.03 [light] + 0.02 [a in {center, right}]
#   mem_mb = 60  + 100 (f - 0.45)^2 + 30 (s - 0.25)^2 + 8 [dark] + 4 [a == justify]
# Each metric is divided by its upper bound over the box (ranges start at 0).
JS_FLOOR, ERR_FLOOR, MEM_FLOOR = 40.0, 0.02, 60.0
JS_MAX = JS_FLOOR + 200 * 0.60**2 + 80 * 0.80**2 + 6
ERR_MAX = ERR_FLOOR + 0.5 * 0.55**2 + 0.8 * 0.70**2 + 0.03 + 0.02
MEM_MAX = MEM_FLOOR + 100 * 0.55**2 + 30 * 0.75**2 + 8 + 4


def _alignment_index(u_align: np.ndarray) -> np.ndarray:
    return np.minimum(np.floor(np.asarray(u_align) * 4.0), 3).astype(int)


def surrogate_metrics_unit(U: np.ndarray, noise: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """``(n, 3)`` array of (js_ms, error_rate, memory_mb) for unit-box points."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    f, theme, s, align = U[:, 0], U[:, 1], U[:, 2], _alignment_index(U[:, 3])
    dark = theme >= 0.5
    justify = align == 3
    js = JS_FLOOR + 200 * (f - 0.40) ** 2 + 80 * (s - 0.20) ** 2 + 6 * justify
    err = ERR_FLOOR + 0.5 * (f - 0.55) ** 2 + 0.8 * (s - 0.30) ** 2 + 0.03 * ~dark + 0.02 * ((align == 1) | (align == 2))
    mem = MEM_FLOOR + 100 * (f - 0.45) ** 2 + 30 * (s - 0.25) ** 2 + 8 * dark + 4 * justify
    out = np.stack([js, err, mem], axis=1)
    if noise:
        rng = rng or np.random.default_rng(0)
        out = out * (1.0 + noise * rng.standard_normal(out.shape))
    return out


def surrogate_cost(candidate: UICandidate) -> tuple[float, float, float]:
    js, err, mem = surrogate_metrics_unit(candidate.to_unit())[0]
    return float(js), float(err), float(mem)


@dataclass(frozen=True)
class CostModel:
    """Weighted, range-normalized composite of the surrogate metrics; lower is better."""

    w_js: float = 0.4
    w_err: float = 0.3
    w_mem: float = 0.3
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        w = (self.w_js, self.w_err, self.w_mem)
        if min(w) < 0 or abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError(f"objective weights must be non-negative and sum to 1: {w}")

    @property
    def ranges(self) -> np.ndarray:
        return np.array([JS_MAX, ERR_MAX, MEM_MAX])

    def normalized_metrics(self, U: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed) if self.noise else None
        return np.clip(surrogate_metrics_unit(U, self.noise, rng) / self.ranges, 0.0, 1.0)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return self.normalized_metrics(U) @ np.array([self.w_js, self.w_err, self.w_mem])

    def evaluate(self, candidate: UICandidate) -> float:
        return float(self(candidate.to_unit())[0])


def evaluate_fitness(candidate: UICandidate, cost_model: CostModel) -> float:
    return cost_model.evaluate(candidate)


@dataclass
class SwarmState:
    population: np.ndarray  # (X, 4) unit-box positions
    fitness: np.ndarray
    drought: np.ndarray  # (X, 4)
    iteration: int
    rng: np.random.Generator

    @property
    def leader_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def leader(self) -> np.ndarray:
        return self.population[self.leader_index]


def init_population(config: QndsoaConfig, objective: Objective, seed: int, bounds: Bounds | None = None) -> SwarmState:
    """Uniform population in the unit box (or the unit image of ``bounds``)."""
    rng = np.random.default_rng(seed)
    lo, hi = _unit_box(bounds)
    pop = lo + rng.uniform(size=(config.population_size, len(lo))) * (hi - lo)
    return SwarmState(
        population=pop,
        fitness=np.asarray(objective(pop), dtype=float),
        drought=np.full(pop.shape, config.initial_drought),
        iteration=0,
        rng=rng,
    )


def _unit_box(bounds: Bounds | None) -> tuple[np.ndarray, np.ndarray]:
    # `bounds` restricts the search inside the UI box; expressed in unit coordinates.
    if bounds is None:
        return np.zeros(4), np.ones(4)
    return UI_BOUNDS.to_unit(np.array(bounds.low)), UI_BOUNDS.to_unit(np.array(bounds.high))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    best_fitness: float
    mean_fitness: float
    leader: tuple[float, ...]  # physical units


@dataclass
class OptimizeResult:
    best: UICandidate
    best_unit: np.ndarray
    best_fitness: float
    history: list[IterationRecord] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def average_fitness_pct(self) -> float:
        return 100.0 * (1.0 - self.history[-1].mean_fitness)

    def history_csv(self) -> str:
        lines = ["iteration,best_fitness,mean_fitness," + ",".join(DIM_NAMES)]
        for r in self.history:
            lines.append(",".join([str(r.iteration), repr(r.best_fitness), repr(r.mean_fitness), *(repr(v) for v in r.leader)]))
        return "\n".join(lines) + "\n"

    def write_history(self, path: str | Path) -> None:
        Path(path).write_text(self.history_csv(), encoding="utf-8")

    def best_json(self) -> str:
        return json.dumps({"fitness": self.best_fitness, "candidate": self.best.decoded()}, sort_keys=True, indent=2) + "\n"


def _record(state: SwarmState) -> IterationRecord:
    leader = UICandidate.from_unit(state.leader).as_array()
    return IterationRecord(state.iteration, float(state.fitness.min()), float(state.fitness.mean()), tuple(float(v) for v in leader))


def step_swarm(state: SwarmState, objective: Objective, config: QndsoaConfig, bounds: Bounds | None = None) -> None:
    """Advance ``state`` by one iteration in place."""
    lo, hi = _unit_box(bounds)
    state.iteration += 1
    h = state.iteration / config.max_iterations
    sigma = config.sigma * config.sigma_decay ** (state.iteration - 1)
    leader = state.leader.copy()
    cands = np.empty_like(state.population)
    dim = state.population.shape[1]
    for i in range(len(state.population)):
        Tm = state.rng.uniform(config.temperature_low, config.temperature_high, size=dim)
        hm = state.rng.uniform(0.0, config.humidity_high, size=dim)
        alpha = ndf(leader, state.population[i], config.O, h)
        state.drought[i] = update_drought(state.drought[i], Tm, hm, config.iota, alpha)
        cands[i] = np.clip(state.population[i] + state.drought[i] * sigma, lo, hi)
    new_fit = np.asarray(objective(cands), dtype=float)
    accept = new_fit <= state.fitness
    state.population[accept] = cands[accept]
    state.fitness[accept] = new_fit[accept]


def optimize(objective: Objective, config: QndsoaConfig | None = None, seed: int = 0, bounds: Bounds | None = None) -> OptimizeResult:
    """Run the swarm; stops at ``max_iterations`` or after ``patience`` iterations
    whose best-fitness improvement is below ``tolerance``."""
    config = config or QndsoaConfig()
    state = init_population(config, objective, seed, bounds)
    history = [_record(state)]
    stale = 0
    stopped = False
    for _ in range(config.max_iterations):
        prev = history[-1].best_fitness
        step_swarm(state, objective, config, bounds)
        history.append(_record(state))
        stale = stale + 1 if prev - history[-1].best_fitness < config.tolerance else 0
        if config.patience is not None and stale >= config.patience:
            stopped = True
            break
    best_unit = state.leader.copy()
    return OptimizeResult(
        best=UICandidate.from_unit(best_unit),
        best_unit=best_unit,
        best_fitness=float(state.fitness.min()),
        history=history,
        stopped_early=stopped,
    )


_FONT_CENTRES = (0.40, 0.55, 0.45)
_FONT_COEFS = (200.0, 0.5, 100.0)
_SPACING_CENTRES = (0.20, 0.30, 0.25)
_SPACING_COEFS = (80.0, 0.8, 30.0)


def surrogate_optimum(cost_model: CostModel | None = None) -> np.ndarray:
    """Unit-box minimizer of ``cost_model`` in closed form.

    The continuous part is a sum of 1-D quadratics, so each coordinate sits at
    the weighted mean of the bowl centres. Theme and alignment are picked by
    enumerating their categories; the point returned is the centre of the
    winning category's interval.
    """
    cost_model = cost_model or CostModel()
    scale = np.array([cost_model.w_js, cost_model.w_err, cost_model.w_mem]) / cost_model.ranges

    def centre(coefs, centres):
        k = scale * np.array(coefs)
        return float(np.dot(k, centres) / k.sum()) if k.sum() > 0 else 0.5

    f, s = centre(_FONT_COEFS, _FONT_CENTRES), centre(_SPACING_COEFS, _SPACING_CENTRES)
    options = [np.array([f, theme, s, align]) for theme in (0.25, 0.75) for align in (0.125, 0.375, 0.625, 0.875)]
    values = cost_model(np.array(options))
    return options[int(np.argmin(values))]


def candidate_distance(candidate: UICandidate, target_unit: np.ndarray) -> float:
    """RMS distance in the unit box; categorical dimensions count 0 on a match, 1 otherwise."""
    u = candidate.to_unit()
    target = UICandidate.from_unit(target_unit)
    deltas = np.array(
        [
            u[0] - target_unit[0],
            float(candidate.theme != target.theme),
            u[2] - target_unit[2],
            float(candidate.alignment != target.alignment),
        ]
    )
    return float(np.sqrt(np.mean(deltas**2)))


def write_best(result: OptimizeResult, path: str | Path) -> None:
    Path(path).write_text(result.best_json(), encoding="utf-8")


def read_history(path: str | Path) -> list[IterationRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        IterationRecord(int(r["iteration"]), float(r["best_fitness"]), float(r["mean_fitness"]), tuple(float(r[d]) for d in DIM_NAMES))
        for r in rows
    ]
