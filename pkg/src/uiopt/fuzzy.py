"""Fuzzy UX-change severity labeling with derivative-weighted defuzzification.

Crisp UICPI -> sigmoid fuzzification -> three triangular band memberships
(Lw, Md, Hw) -> defuzzified score where each rule's centroid is weighted by
firing strength times the membership slope magnitude at the input.

Band edges are 0.31 (Lw/Md, with [0.30, 0.31) given to Lw) and 0.6 (Md/Hw,
0.6 itself is Md). Triangles peak at the band centres 0.15, 0.455, 0.8.
Around each edge the two neighbouring triangles overlap over a 0.05-wide
zone, and their feet are placed so the two memberships cross exactly on the
edge; the strongest rule therefore always agrees with the crisp bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

LW_MD_EDGE = 0.31
MD_HW_EDGE = 0.6
OVERLAP = 0.05
PEAKS = (0.15, 0.455, 0.8)
SLOPE_FLOOR = 1e-6
TIE_TOL = 1e-12


class Severity(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Severity.LOW: 0, Severity.MEDIUM: 1, Severity.HIGH: 2}
RULE_LABELS = ("Lw", "Md", "Hw")
_RULE_TO_SEVERITY = dict(zip(RULE_LABELS, Severity))


def _feet_around(edge: float, left_peak: float, right_peak: float, overlap: float) -> tuple[float, float]:
    # Solve for feet so both memberships are equal at `edge` and the overlap
    # zone [right_start, left_end] has width `overlap`.
    a, b = edge - left_peak, right_peak - edge
    k = overlap / (a + b)  # m / (1 - m), m = membership at the edge
    return edge + k * a, edge - k * b  # (left triangle's right foot, right triangle's left foot)


@dataclass(frozen=True)
class Triangle:
    left: float
    peak: float
    right: float

    def membership(self, x: float) -> float:
        if x <= self.left or x >= self.right:
            return 0.0
        if x < self.peak:
            return (x - self.left) / (self.peak - self.left)
        return (self.right - x) / (self.right - self.peak)

    def slope(self, x: float) -> float:
        """|d membership / dx|; the falling side is used at the peak itself."""
        if x <= self.left or x >= self.right:
            return 0.0
        if x < self.peak:
            return 1.0 / (self.peak - self.left)
        return 1.0 / (self.right - self.peak)


def band_triangles(overlap: float = OVERLAP) -> tuple[Triangle, Triangle, Triangle]:
    lw_right, md_left = _feet_around(LW_MD_EDGE, PEAKS[0], PEAKS[1], overlap)
    md_right, hw_left = _feet_around(MD_HW_EDGE, PEAKS[1], PEAKS[2], overlap)
    # outer feet mirror the inner extension past 0 and 1
    lw_left = 0.0 - (lw_right - LW_MD_EDGE)
    hw_right = 1.0 + (MD_HW_EDGE - hw_left)
    return (
        Triangle(lw_left, PEAKS[0], lw_right),
        Triangle(md_left, PEAKS[1], md_right),
        Triangle(hw_left, PEAKS[2], hw_right),
    )


@dataclass(frozen=True)
class FuzzyConfig:
    G: float = 10.0
    J: float = 0.45
    centroids: tuple[float, float, float] = (0.15, 0.45, 0.80)

    def __post_init__(self) -> None:
        if self.G <= 0:
            raise ValueError("G must be positive")
        c = self.centroids
        if len(c) != 3 or not (c[0] < c[1] < c[2]) or not all(0.0 <= v <= 1.0 for v in c):
            raise ValueError(f"centroids must be strictly increasing in [0, 1]: {c}")


@dataclass(frozen=True)
class RuleActivation:
    label: str
    firing_strength: float
    derivative_weight: float
    centroid: float


@dataclass(frozen=True)
class UXChangeLabel:
    label: Severity
    crisp_score: float
    fuzzified_input: float


def fuzzify(phi: float, config: FuzzyConfig | None = None) -> float:
    """Sigmoid ``1 / (1 + exp(-G (phi - J)))``, computed without overflow."""
    config = config or FuzzyConfig()
    z = config.G * (phi - config.J)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def crisp_band(phi_fuzz: float) -> str:
    if phi_fuzz < LW_MD_EDGE:
        return "Lw"
    if phi_fuzz <= MD_HW_EDGE:
        return "Md"
    return "Hw"


def apply_rules(phi_fuzz: float, config: FuzzyConfig | None = None) -> list[RuleActivation]:
    config = config or FuzzyConfig()
    return [
        RuleActivation(
            label=name,
            firing_strength=tri.membership(phi_fuzz),
            derivative_weight=max(tri.slope(phi_fuzz), SLOPE_FLOOR),
            centroid=c,
        )
        for name, tri, c in zip(RULE_LABELS, band_triangles(), config.centroids)
    ]


def top_rule(activations: Sequence[RuleActivation], phi_fuzz: float) -> str:
    """Strongest rule; on a tie at a band edge the crisp band decides."""
    best = max(a.firing_strength for a in activations)
    tied = [a.label for a in activations if best - a.firing_strength <= TIE_TOL]
    if len(tied) == 1:
        return tied[0]
    band = crisp_band(phi_fuzz)
    return band if band in tied else tied[0]


def defuzzify_dwaf(activations: Sequence[RuleActivation]) -> float:
    """``sum(O_c * |d_c| * zeta_c) / sum(O_c * |d_c|)`` over the rules."""
    num = den = 0.0
    for a in activations:
        if a.firing_strength <= 0:
            continue
        w = a.firing_strength * a.derivative_weight
        num += w * a.centroid
        den += w
    if den <= 0:
        raise ValueError("no rule fired")
    return num / den


def label(phi: float, config: FuzzyConfig | None = None) -> UXChangeLabel:
    config = config or FuzzyConfig()
    q = fuzzify(phi, config)
    acts = apply_rules(q, config)
    return UXChangeLabel(
        label=_RULE_TO_SEVERITY[top_rule(acts, q)],
        crisp_score=defuzzify_dwaf(acts),
        fuzzified_input=q,
    )
