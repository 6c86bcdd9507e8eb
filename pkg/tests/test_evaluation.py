import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drjcc.analytics import kmeans
from drjcc.config import AmbiguitySpec, RiskSpec
from drjcc.dro import DecisionSchedule, RecourseRule
from drjcc.evaluation import (
    EvaluationError,
    aggregate_grid_draw,
    cluster_groups,
    compare_strategies,
    compute_par,
    normalize_radii,
    out_of_sample_cost,
    out_of_sample_violation,
    out_of_sample_violation_naive,
    run_baseline,
    solve_centralized,
    solve_community,
    sweep_rho,
)
from drjcc.scenarios import ScenarioSet

from conftest import make_scenarios, toy_community


def schedule(T, p, q_diag=0.0, pe=None):
    z = np.zeros(T)
    return DecisionSchedule(
        p=np.asarray(p, dtype=float), pe=pe or {}, pb=z, ps=z,
        Q=RecourseRule(np.eye(T) * q_diag), E=np.zeros(T + 1), S=np.zeros(T + 1),
    )


def test_par_examples():
    assert compute_par(np.ones(24)) == 1.0
    spike = np.zeros(24)
    spike[7] = 5.0
    assert compute_par(spike) == 24.0
    with pytest.raises(EvaluationError):
        compute_par(np.zeros(4))
    with pytest.raises(EvaluationError):
        compute_par([1.0, -1.0])


@given(x=st.lists(st.floats(0, 1e4), min_size=1, max_size=48).filter(lambda v: max(v) > 1e-3))
def test_par_at_least_one(x):
    assert compute_par(x) >= 1.0 - 1e-12


def test_grid_draw_ignores_exports():
    draw = aggregate_grid_draw({"a": schedule(2, [3.0, -1.0]), "b": schedule(2, [1.0, 2.0])})
    np.testing.assert_array_equal(draw, [4.0, 2.0])


def test_cost_without_recourse_is_first_stage():
    cfg = toy_community(T=2, N=2)
    test = ScenarioSet({pid: make_scenarios([[1.0, 2.0], [2.0, 1.0]]) for pid in cfg.ids})
    scheds = {
        "n0": schedule(2, [1.0, 2.0], pe={"n1": np.array([0.5, -0.5])}),
        "n1": schedule(2, [3.0, 1.0], pe={"n0": np.array([-0.5, 0.5])}),
    }
    cost = out_of_sample_cost(scheds, cfg, test)
    assert cost.realized["n0"] == pytest.approx(0.1 * 3.0 + 0.08 * 0.0)
    assert cost.total_realized == pytest.approx(0.1 * 7.0)
    assert cost.total_worst_case == pytest.approx(cost.total_realized)


def test_cost_two_sample_hand_instance():
    # deviations -1 and +1 at hour 0 with D = 2, Q = 3: recourse -1.5 and +1.5
    cfg = toy_community(T=1)
    test = ScenarioSet({"n0": make_scenarios([[1.0], [3.0]])})
    cost = out_of_sample_cost({"n0": schedule(1, [2.0], q_diag=3.0)}, cfg, test, AmbiguitySpec(0.1))
    assert cost.realized_rt["n0"] == pytest.approx(0.0)
    assert cost.first_stage["n0"] == pytest.approx(0.2)
    # worst case adds rho * |Q' c_q| = 0.1 * 0.6
    assert cost.worst_case_rt["n0"] == pytest.approx(0.06)


def test_recourse_clipped_to_box():
    cfg = toy_community(T=1, q_min=-1.0, q_max=1.0)
    test = ScenarioSet({"n0": make_scenarios([[1.0], [3.0]])})
    cost = out_of_sample_cost({"n0": schedule(1, [2.0], q_diag=3.0)}, cfg, test)
    assert cost.realized_rt["n0"] == pytest.approx(0.0)


def test_violation_examples():
    cfg = toy_community(T=2)
    test = ScenarioSet({"n0": make_scenarios([[1.0, 2.0], [3.0, 4.0]])})
    assert out_of_sample_violation({"n0": schedule(2, [100.0, 100.0])}, cfg, test).overall == 0.0
    assert out_of_sample_violation({"n0": schedule(2, [0.0, 0.0])}, cfg, test).overall == 1.0
    # supply 2 covers the first day only
    rep = out_of_sample_violation({"n0": schedule(2, [2.0, 2.5])}, cfg, test)
    assert rep.overall == 0.5 and rep.violations == 1 and rep.pairs == 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_violation_paths_agree(seed):
    rng = np.random.default_rng(seed)
    T, I = 3, 7
    cfg = toy_community(T=T, N=2, q_min=-1.0, q_max=1.0)
    test = ScenarioSet({pid: make_scenarios(rng.uniform(1, 3, size=(I, T))) for pid in cfg.ids})
    scheds = {
        pid: schedule(T, rng.uniform(1, 3, size=T), q_diag=rng.normal(),
                      pe={m: rng.normal(size=T) for m in cfg[pid].neighbors})
        for pid in cfg.ids
    }
    a = out_of_sample_violation(scheds, cfg, test)
    b = out_of_sample_violation_naive(scheds, cfg, test)
    assert a.overall == b.overall and a.per_prosumer == b.per_prosumer
    assert 0.0 <= a.overall <= 1.0


def test_dimension_checks():
    cfg = toy_community(T=2)
    test = ScenarioSet({"n0": make_scenarios([[1.0, 2.0]])})
    with pytest.raises(EvaluationError):
        out_of_sample_cost({}, cfg, test)
    with pytest.raises(EvaluationError):
        out_of_sample_violation({"n0": schedule(3, np.zeros(3))}, cfg, test)


def test_baseline_on_isolated_community_matches_admm(small_instance):
    cfg, scen = small_instance
    iso = cfg.isolated()
    base = run_baseline(cfg, scen)
    admm = solve_community(iso, scen)
    assert base.objective == pytest.approx(admm.objective, abs=1e-7)
    for pid in cfg.ids:
        assert base.schedules[pid].pe == {}
        np.testing.assert_allclose(base.schedules[pid].p, admm.schedules[pid].p, atol=1e-6)


def test_trading_never_costs_more(small_instance):
    cfg, scen = small_instance
    base = run_baseline(cfg, scen)
    prop = solve_centralized(cfg, scen)
    assert prop.objective <= base.objective + 1e-6 * abs(base.objective)


def test_same_data_zero_radius_reproduces_training_rt(small_instance):
    cfg, scen = small_instance
    amb = AmbiguitySpec(0.0)
    sol = solve_centralized(cfg, scen, amb)
    cost = out_of_sample_cost(sol.schedules, cfg, scen, amb)
    for pid in cfg.ids:
        assert cost.realized_rt[pid] == pytest.approx(sol.schedules[pid].worst_case_rt, abs=1e-7)
    assert sum(cost.realized.values()) == pytest.approx(sol.objective, rel=1e-8)


def test_exactness_regime_on_training_samples(small_instance):
    cfg, scen = small_instance
    risk = RiskSpec(len(cfg.ids) / scen.sample_count)  # each prosumer gets 1/I
    sol = solve_centralized(cfg, scen, AmbiguitySpec(0.0), risk)
    assert out_of_sample_violation(sol.schedules, cfg, scen).overall <= risk.epsilon


def test_compare_strategies_report(small_instance):
    cfg, scen = small_instance
    rep = compare_strategies(cfg, scen, scen, solver="centralized", seeds={"generator": 3})
    d = rep.to_dict()
    assert d["seeds"] == {"generator": 3}
    assert rep.cost_reduction == pytest.approx(1 - rep.total_cost_proposed / rep.total_cost_baseline)
    assert rep.par_baseline >= 1 and rep.par_proposed >= 1
    assert 0 <= rep.violation_proposed <= 1
    assert rep.objective_proposed <= rep.objective_baseline + 1e-6


def test_unknown_solver(small_instance):
    cfg, scen = small_instance
    with pytest.raises(EvaluationError):
        solve_community(cfg, scen, solver="magic")


def test_radius_normalization():
    assert normalize_radii([0.001, 0.2, 0.03, 0.1, 0.01]) == [0.2, 0.1, 0.03, 0.01, 0.001]
    with pytest.warns(UserWarning, match="duplicate"):
        assert normalize_radii([0.1, 0.1, 0.2]) == [0.2, 0.1]
    with pytest.raises(EvaluationError):
        normalize_radii([0.1])
    with pytest.raises(EvaluationError):
        normalize_radii([0.1, -0.1])


def test_cluster_groups(small_instance):
    cfg, _ = small_instance
    assert cluster_groups(cfg) == {"all": cfg.ids}
    model = kmeans(np.arange(3.0)[:, None], 3, restarts=1, ids=cfg.ids)
    assert sorted(len(v) for v in cluster_groups(cfg, model).values()) == [1, 1, 1]
    mapping = {pid: "x" for pid in cfg.ids}
    assert cluster_groups(cfg, mapping) == {"x": cfg.ids}


def test_sweep_shape(small_instance):
    cfg, scen = small_instance
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rows = sweep_rho(cfg, scen, scen, [0.001, 0.2, 0.03], solver="centralized",
                         clusters={pid: cfg[pid].archetype for pid in cfg.ids})
    assert [r.rho for r in rows] == [0.2, 0.03, 0.001]
    vals = [r.in_sample for r in rows]
    assert all(a >= b - 1e-6 for a, b in zip(vals, vals[1:]))
    for r in rows:
        assert sum(r.cluster_costs.values()) == pytest.approx(r.oos_cost)
        assert 0 <= r.violation <= 1
