from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference_surrogate import composite_terms, grid_minimum
from uiopt.optimizer import (
    UI_BOUNDS,
    Bounds,
    CostModel,
    QndsoaConfig,
    SphereObjective,
    UICandidate,
    candidate_distance,
    init_population,
    ndf,
    optimize,
    read_history,
    step_swarm,
    surrogate_metrics_unit,
    surrogate_optimum,
    update_drought,
    update_position,
)

def test_terms_match_cost_model_on_coarse_full_grid():
    axis = np.linspace(0, 1, 11)
    U = np.stack(np.meshgrid(axis, axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 4)
    font, theme, spacing, align, const = composite_terms()
    oracle = const + font(U[:, 0]) + theme(U[:, 1]) + spacing(U[:, 2]) + align(U[:, 3])
    assert np.allclose(CostModel()(U), oracle, atol=1e-12)


def test_ndf_examples():
    assert np.array_equal(ndf(np.full(4, 0.3), np.full(4, 0.3), 3.0, 0.7), np.zeros(4))
    d = np.array([0.2, -0.1, 0.4, 0.0])
    assert np.array_equal(ndf(d, np.zeros(4), 3.0, 0.0), d)
    got = ndf(np.array([1.0, 0, 0, 0]), np.zeros(4), 3.0, 0.5)
    assert got[0] == pytest.approx(float(mpmath.exp(-1.5)), abs=1e-15)
    assert got[0] == pytest.approx(0.22313, abs=1e-5)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0.1, 5))
def test_ndf_norm_at_full_time(leader, member, O):
    leader, member = np.array(leader), np.array(member)
    got = np.linalg.norm(ndf(leader, member, O, 1.0))
    assert abs(got - math.exp(-O) * np.linalg.norm(leader - member)) < 1e-12


def test_update_drought_examples():
    z = np.zeros(4)
    assert np.array_equal(update_drought(np.full(4, 0.2), 0.0, 0.0, 2.0, z), z)
    assert update_drought(np.array([0.2]), 0.5, 0.3, 2.0, np.zeros(1))[0] == pytest.approx(0.8, abs=1e-15)
    assert update_drought(np.array([0.2]), 0.0, 0.0, 2.0, np.array([0.1]))[0] == pytest.approx(0.2, abs=1e-15)


def test_update_drought_floor():
    out = update_drought(np.array([-0.8]), 1.0, 0.0, 1.0, np.zeros(1))
    assert np.isfinite(out).all() and out[0] == pytest.approx(1e6)


def test_update_position_examples():
    member = UICandidate(16.0, 0.0, 0.1, 0.0)
    assert update_position(member, np.zeros(4), 0.9) == member
    moved = update_position(member, np.array([2.0, 0, 0, 0]), 0.9)
    assert moved.font_size == pytest.approx(17.8, abs=1e-12)
    assert update_position(member, np.array([30.0, 0, 0, 0]), 0.9).font_size == 32.0
    assert update_position(np.full(4, 0.9), np.full(4, 1.0), 0.5).tolist() == [1.0] * 4


def test_candidate_validation_and_decoding():
    with pytest.raises(ValueError):
        UICandidate(7.0, 0.0, 0.0, 0.0)
    c = UICandidate(14.0, 0.7, 0.1, 3.2)
    assert (c.theme, c.alignment) == ("dark", "justify")
    # alignment is half-open [0, 4); the unit-box edge maps just below 4
    with pytest.raises(ValueError):
        UICandidate(14.0, 0.2, 0.1, 4.0)
    assert UICandidate.from_unit([0.5, 0.2, 0.5, 1.0]).alignment == "justify"
    assert np.allclose(UICandidate.from_unit(c.to_unit()).as_array(), c.as_array())


def test_init_population_in_bounds():
    cfg = QndsoaConfig(population_size=30)
    sub = Bounds(low=(10.0, 0.0, 0.1, 1.0), high=(20.0, 1.0, 0.3, 3.0))
    for seed in range(100):
        state = init_population(cfg, CostModel(), seed, sub)
        phys = UI_BOUNDS.from_unit(state.population)
        assert np.all(phys >= np.array(sub.low) - 1e-12) and np.all(phys <= np.array(sub.high) + 1e-12)


def test_init_population_seeded_and_collapsed():
    cfg = QndsoaConfig(population_size=8)
    a = init_population(cfg, CostModel(), 3)
    b = init_population(cfg, CostModel(), 3)
    assert np.array_equal(a.population, b.population)
    point = Bounds(low=(12.0, 1.0, 0.2, 2.0), high=(12.0, 1.0, 0.2, 2.0))
    c = init_population(cfg, CostModel(), 3, point)
    assert np.all(c.population == c.population[0])


def test_config_validated():
    with pytest.raises(ValueError):
        QndsoaConfig(population_size=1)
    with pytest.raises(ValueError):
        QndsoaConfig(patience=0)
    with pytest.raises(ValueError):
        CostModel(0.5, 0.5, 0.5)


def test_zero_iterations_returns_best_initial():
    cfg = QndsoaConfig(max_iterations=0, population_size=10)
    res = optimize(CostModel(), cfg, seed=4)
    init = init_population(cfg, CostModel(), 4)
    assert res.best_fitness == init.fitness.min()
    assert np.array_equal(res.best_unit, init.population[init.fitness.argmin()])
    assert len(res.history) == 1


def test_weight_degeneracy():
    U = np.random.default_rng(0).uniform(size=(20, 4))
    js = surrogate_metrics_unit(U)[:, 0] / CostModel().ranges[0]
    assert np.allclose(CostModel(1.0, 0.0, 0.0)(U), js, atol=1e-15)


def test_surrogate_floors_at_bowl_minima():
    js, err, mem = surrogate_metrics_unit(np.array([[0.40, 0.75, 0.20, 0.125]]))[0]
    assert js == 40.0
    err_min = surrogate_metrics_unit(np.array([[0.55, 0.75, 0.30, 0.125]]))[0, 1]
    mem_min = surrogate_metrics_unit(np.array([[0.45, 0.25, 0.25, 0.125]]))[0, 2]
    assert err_min == pytest.approx(0.02, abs=1e-15) and mem_min == 60.0
    assert np.array_equal(surrogate_metrics_unit(np.full((2, 4), 0.3)), surrogate_metrics_unit(np.full((2, 4), 0.3)))


@pytest.mark.parametrize("w", [(0.4, 0.3, 0.3), (1.0, 0.0, 0.0), (0.1, 0.6, 0.3)])
def test_surrogate_optimum_matches_grid(w):
    cm = CostModel(*w)
    best = float(cm(surrogate_optimum(cm)[None])[0])
    assert best <= grid_minimum(w) + 1e-12
    assert grid_minimum(w) - best < 1e-3


def test_history_monotone_and_leader_optimal():
    cfg = QndsoaConfig(max_iterations=60, population_size=12)
    state = init_population(cfg, CostModel(), 1)
    best = state.fitness.min()
    for _ in range(cfg.max_iterations):
        step_swarm(state, CostModel(), cfg)
        assert state.fitness[state.leader_index] == state.fitness.min() <= best
        assert np.all((state.population >= 0) & (state.population <= 1))
        best = state.fitness.min()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_best_so_far_non_increasing(seed):
    res = optimize(CostModel(), QndsoaConfig(max_iterations=40, population_size=10), seed=seed)
    bests = [r.best_fitness for r in res.history]
    assert all(b <= a for a, b in zip(bests, bests[1:]))


def test_patience_stops_early():
    res = optimize(SphereObjective(), QndsoaConfig(max_iterations=500, tolerance=1.0, patience=3), seed=0)
    assert res.stopped_early and len(res.history) == 4


def test_candidate_distance():
    opt = surrogate_optimum()
    assert candidate_distance(UICandidate.from_unit(opt), opt) == pytest.approx(0.0, abs=1e-12)


def test_history_round_trip(tmp_path):
    res = optimize(CostModel(), QndsoaConfig(max_iterations=5, population_size=4), seed=2)
    res.write_history(tmp_path / "h.csv")
    assert read_history(tmp_path / "h.csv") == res.history


@pytest.mark.slow
def test_surrogate_search_close_to_grid():
    cm = CostModel()
    target = grid_minimum()
    for seed in range(5):
        res = optimize(cm, QndsoaConfig(), seed=seed)
        assert abs(res.best_fitness - target) <= 0.02 * target
