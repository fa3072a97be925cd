from __future__ import annotations

import math

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uiopt.fuzzy import (
    LW_MD_EDGE,
    MD_HW_EDGE,
    FuzzyConfig,
    RuleActivation,
    Severity,
    apply_rules,
    band_triangles,
    crisp_band,
    defuzzify_dwaf,
    fuzzify,
    label,
    top_rule,
)


def inverse_fuzzify(q: float, config: FuzzyConfig) -> float:
    return config.J + math.log(q / (1 - q)) / config.G


def act(name: str, strength: float, weight: float, centroid: float) -> RuleActivation:
    return RuleActivation(name, strength, weight, centroid)


def test_fuzzify_examples():
    cfg = FuzzyConfig(G=10, J=0.5)
    assert fuzzify(0.5, cfg) == 0.5
    assert fuzzify(0.5 + 1e-9, cfg) > 0.5
    oracle = float(1 / (1 + mpmath.exp(-3)))
    assert fuzzify(0.8, cfg) == pytest.approx(oracle, abs=1e-15)
    assert fuzzify(0.8, cfg) == pytest.approx(0.952574, abs=1e-6)


def test_fuzzify_limits_with_large_g():
    cfg = FuzzyConfig(G=500, J=0.5)
    assert fuzzify(0.0, cfg) < 1e-100
    assert fuzzify(1.0, cfg) == 1.0


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_fuzzify_monotone(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= fuzzify(lo) <= fuzzify(hi) <= 1.0


@pytest.mark.parametrize("q,expected", [(0.1, "Lw"), (0.2, "Lw"), (0.45, "Md"), (0.7, "Hw"), (0.95, "Hw")])
def test_band_labels(q, expected):
    assert top_rule(apply_rules(q), q) == expected
    assert crisp_band(q) == expected


@pytest.mark.parametrize("q,expected", [(0.1, Severity.LOW), (0.95, Severity.HIGH)])
def test_label_from_phi(q, expected):
    cfg = FuzzyConfig()
    out = label(inverse_fuzzify(q, cfg), cfg)
    assert out.label is expected
    assert out.fuzzified_input == pytest.approx(q, abs=1e-12)


def test_band_edges_follow_crisp_rule():
    # [0.30, 0.31) belongs to Lw, 0.6 itself to Md
    for q, expected in [(0.30, "Lw"), (0.3099, "Lw"), (LW_MD_EDGE, "Md"), (MD_HW_EDGE, "Md"), (0.6001, "Hw")]:
        assert top_rule(apply_rules(q), q) == expected


def test_neighbouring_memberships_cross_on_edges():
    lw, md, hw = band_triangles()
    assert lw.membership(LW_MD_EDGE) == pytest.approx(md.membership(LW_MD_EDGE), abs=1e-12)
    assert md.membership(MD_HW_EDGE) == pytest.approx(hw.membership(MD_HW_EDGE), abs=1e-12)
    assert md.left == pytest.approx(lw.right - 0.05, abs=1e-12)
    assert hw.left == pytest.approx(md.right - 0.05, abs=1e-12)


def test_dwaf_single_rule():
    assert defuzzify_dwaf([act("Md", 0.7, 123.0, 0.45)]) == 0.45


def test_dwaf_equal_weights():
    assert defuzzify_dwaf([act("Lw", 0.5, 3.0, 0.15), act("Md", 0.5, 3.0, 0.45)]) == pytest.approx(0.30, abs=1e-12)


def test_dwaf_worked_example():
    got = defuzzify_dwaf([act("Lw", 0.8, 2.0, 0.15), act("Md", 0.2, 1.0, 0.45), act("Hw", 0.0, 5.0, 0.8)])
    oracle = (0.8 * 2 * 0.15 + 0.2 * 1 * 0.45) / (0.8 * 2 + 0.2 * 1)
    assert abs(got - oracle) < 1e-9
    assert got == pytest.approx(0.18333, abs=1e-5)


def test_dwaf_nothing_fired():
    with pytest.raises(ValueError, match="no rule fired"):
        defuzzify_dwaf([act("Lw", 0.0, 1.0, 0.15)])


def test_config_validated():
    with pytest.raises(ValueError):
        FuzzyConfig(G=0)
    with pytest.raises(ValueError):
        FuzzyConfig(centroids=(0.5, 0.4, 0.8))


strengths = st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda s: sum(s) > 1e-6)


@given(strengths, st.lists(st.floats(1e-6, 100), min_size=3, max_size=3))
def test_dwaf_within_active_hull(s, w):
    c = (0.15, 0.45, 0.8)
    acts = [act(n, si, wi, ci) for n, si, wi, ci in zip("abc", s, w, c)]
    active = [ci for si, ci in zip(s, c) if si > 0]
    assert min(active) - 1e-12 <= defuzzify_dwaf(acts) <= max(active) + 1e-12


@given(strengths, st.floats(1e-6, 100))
def test_dwaf_uniform_weights_reduce_to_weighted_average(s, w):
    c = (0.15, 0.45, 0.8)
    acts = [act(n, si, w, ci) for n, si, ci in zip("abc", s, c)]
    plain = sum(si * ci for si, ci in zip(s, c)) / sum(s)
    assert abs(defuzzify_dwaf(acts) - plain) < 1e-9


@given(st.floats(0, 1), st.floats(0, 1))
def test_label_monotone(a, b):
    lo, hi = sorted((a, b))
    assert label(lo).label.rank <= label(hi).label.rank


@given(st.floats(0, 1))
def test_label_consistent_with_bands(phi):
    out = label(phi)
    assert out.label.rank == ["Lw", "Md", "Hw"].index(crisp_band(out.fuzzified_input))
    assert 0.0 <= out.crisp_score <= 1.0
