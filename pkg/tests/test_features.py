from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_record
from uiopt.features import (
    FEATURE_NAMES,
    InteractionMetrics,
    UICPIWeights,
    compute_interaction_metrics,
    compute_uicpi,
    export_features,
    extract_features,
    fit_feature_meta,
    load_features,
    rage_click_fraction,
    raw_features,
)
from uiopt.synthetic import SyntheticProfile, generate_synthetic_sessions


def _six_clicks_a_minute():
    return make_record([(0, "PageLoad")] + [(10_000 * k, "Click", {"x": 100.0 * k, "y": 0.0}) for k in range(1, 7)])


def test_click_rate_hand_count():
    raw, zero = raw_features(_six_clicks_a_minute())
    assert raw[FEATURE_NAMES.index("click_rate_per_min")] == pytest.approx(6.0)
    assert not zero


def test_no_scrolls_gives_zero_scroll_features():
    raw, _ = raw_features(_six_clicks_a_minute())
    assert raw[3:6].tolist() == [0.0, 0.0, 0.0]


def test_zero_duration_flagged():
    rec = make_record([(0, "PageLoad"), (0, "Click", {"x": 1.0, "y": 1.0})])
    raw, zero = raw_features(rec)
    assert zero
    assert raw[FEATURE_NAMES.index("click_rate_per_min")] == 0.0
    assert extract_features([rec])[0].zero_duration


def test_scroll_reversals_and_double_clicks():
    rec = make_record(
        [
            (0, "Scroll", {"scroll_depth_pct": 10.0}),
            (100, "Scroll", {"scroll_depth_pct": 50.0}),
            (200, "Scroll", {"scroll_depth_pct": 20.0}),
            (300, "Scroll", {"scroll_depth_pct": 20.0}),
            (400, "Scroll", {"scroll_depth_pct": 60.0}),
            (1000, "Click", {"x": 0.0, "y": 0.0}),
            (1200, "Click", {"x": 3.0, "y": 4.0}),
            (5000, "Click", {"x": 3.0, "y": 4.0}),
        ]
    )
    raw, _ = raw_features(rec)
    assert raw[FEATURE_NAMES.index("scroll_reversals")] == 2
    assert raw[FEATURE_NAMES.index("double_click_ratio")] == pytest.approx(1 / 3)
    assert raw[FEATURE_NAMES.index("max_scroll_depth_pct")] == 60.0
    assert raw[FEATURE_NAMES.index("click_depth_mean")] == 60.0


def test_identical_sessions_identical_vectors():
    a = _six_clicks_a_minute()
    b = make_record([(e.timestamp_ms, e.kind.value, {"x": e.x, "y": e.y}) for e in a.events], session_id="s2")
    fa, fb = extract_features([a, b])
    assert np.array_equal(fa.values, fb.values)


def test_features_in_unit_range_and_fixed_width():
    recs = generate_synthetic_sessions(SyntheticProfile(n_sessions=40, seed=3)).records
    vecs = extract_features(recs)
    m = np.array([v.values for v in vecs])
    assert m.shape == (40, len(FEATURE_NAMES))
    assert m.min() >= 0.0 and m.max() <= 1.0
    assert vecs[0].click_features.size + vecs[0].scroll_features.size + vecs[0].mouse_features.size + vecs[0].network_features.size == len(FEATURE_NAMES)


def test_fitted_meta_clips_new_sessions():
    recs = generate_synthetic_sessions(SyntheticProfile(n_sessions=30, seed=1)).records
    vecs = extract_features(recs, fit_feature_meta(recs[:10]))
    assert all(v.values.min() >= 0 and v.values.max() <= 1 for v in vecs)


def test_feature_csv_round_trip(tmp_path):
    recs = generate_synthetic_sessions(SyntheticProfile(n_sessions=12, seed=2)).records
    vecs = extract_features(recs)
    export_features(vecs, tmp_path / "f.csv")
    ids, m = load_features(tmp_path / "f.csv")
    assert ids == [r.session_id for r in recs]
    assert np.array_equal(m, np.array([v.values for v in vecs]))


def test_error_rate_hand_count():
    events = [(0, "PageLoad")] + [(100 * k, "Scroll", {"scroll_depth_pct": 5.0}) for k in range(1, 8)]
    events += [(900, "Error"), (1000, "TaskComplete")]
    m = compute_interaction_metrics(make_record(events))
    assert m.error_rate == pytest.approx(0.1)
    assert m.drop_off_rate == 0.0
    assert m.click_confusion_index == 0.0
    assert m.task_time == 1.0


def test_abandon_is_drop_off():
    m = compute_interaction_metrics(make_record([(0, "PageLoad"), (500, "TaskAbandon")]), max_duration_ms=1000)
    assert m.drop_off_rate == 1.0 and m.task_time == 0.5


def test_rage_burst():
    tight = [(1000 + 200 * k, "Click", {"x": 100.0 + 5 * k, "y": 100.0}) for k in range(3)]
    lone = [(9000, "Click", {"x": 500.0, "y": 500.0})]
    assert rage_click_fraction(make_record(tight + lone)) == pytest.approx(0.75)
    spread = [(1000 + 200 * k, "Click", {"x": 100.0 + 150 * k, "y": 100.0}) for k in range(3)]
    assert rage_click_fraction(make_record(spread)) == 0.0
    slow = [(1000 + 600 * k, "Click", {"x": 100.0, "y": 100.0}) for k in range(3)]
    assert rage_click_fraction(make_record(slow)) == 0.0


def test_uicpi_examples():
    w = UICPIWeights()
    assert compute_uicpi(InteractionMetrics(0.2, 0.4, 0.1, 0.3), w) == pytest.approx(0.25, abs=1e-15)
    assert compute_uicpi(InteractionMetrics(1, 1, 1, 1), UICPIWeights(0.1, 0.2, 0.3, 0.4)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("w", [(0.5, 0.5, 0.5, -0.5), (0.3, 0.3, 0.3, 0.3), (0.25, 0.25, 0.25, 0.25 + 1e-9)])
def test_uicpi_weights_validated(w):
    with pytest.raises(ValueError):
        UICPIWeights(*w)


def test_metrics_validated():
    with pytest.raises(ValueError):
        InteractionMetrics(1.2, 0, 0, 0)


unit = st.floats(0.0, 1.0)


@st.composite
def weights(draw):
    raw = np.array([draw(st.floats(0.0, 1.0)) for _ in range(4)]) + 1e-3
    w = raw / raw.sum()
    w[3] = 1.0 - w[:3].sum()
    return UICPIWeights(*(float(x) for x in w))


@given(unit, weights())
def test_uicpi_constant_metrics(x, w):
    assert compute_uicpi(InteractionMetrics(x, x, x, x), w) == pytest.approx(x, abs=1e-12)


@given(unit, unit, unit, unit, weights())
def test_uicpi_bounded(e, t, d, c, w):
    phi = compute_uicpi(InteractionMetrics(e, t, d, c), w)
    assert -1e-12 <= phi <= 1 + 1e-12
