"""
Tests for the fixed-point solver, its closed-form oracle and update schedules
"""

import numpy as np
import pytest

import backend.solver as solver_module
from backend.config import Settings
from backend.errors import ConfigurationError, SolverError
from backend.quotation import QuotationParams, joint_operator, residual
from backend.solver import (
    ASYNC_FAIRNESS_SWEEPS,
    InitPolicy,
    Schedule,
    SolverConfig,
    closed_form_equilibrium,
    cobweb_trace,
    fair_update_order,
    feasible_upper_bound,
    initial_prices,
    solve,
    sweeps,
)

TIGHT = SolverConfig(epsilon=1e-12)


def test_e1_equilibrium(e1):
    report = solve(e1)
    assert report.converged
    assert report.prices.buyer_price("B1", "M1") == pytest.approx(5.55, abs=1e-8)
    assert report.prices.data_price("D1", "M1") == pytest.approx(0.2 + 0.6 * 5.55 / 1.1, abs=1e-8)
    assert report.final_residual <= 1e-10


def test_e1_by_brute_force(e1):
    final = sweeps(e1, initial_prices(e1), 1000)[-1]
    assert final.max_abs_diff(closed_form_equilibrium(e1)) <= 1e-10


def test_e2_equilibrium(e2):
    report = solve(e2)
    assert report.prices.buyer_prices == pytest.approx([3.5, 3.5], abs=1e-8)
    assert report.prices.data_prices == pytest.approx([0.94, 1.56], abs=1e-8)


def test_closed_form_with_fee(e1):
    p = closed_form_equilibrium(e1, QuotationParams(fee_factor=2.0))
    assert p.buyer_prices[0] == pytest.approx(11.1)
    assert residual(e1, p, QuotationParams(fee_factor=2.0)) <= 1e-12


def test_uncoupled_market_converges_immediately(table2):
    instance = table2(4, rho=0.0)
    report = solve(instance)
    index = instance.index
    assert report.iterations <= 2
    assert np.array_equal(report.prices.data_prices, index.kappa_d)
    expected = index.kappa_m + (1 + index.delta) * index.per_model_sum(index.kappa_d)
    assert report.prices.buyer_prices == pytest.approx(expected[index.buyer_model], abs=1e-12)


def test_solver_matches_closed_form(table2):
    rng = np.random.default_rng(1)
    for seed in range(200):
        instance = table2(seed, rho=float(rng.uniform(0.0, 0.9)))
        report = solve(instance, config=TIGHT)
        assert report.converged
        assert report.prices.max_abs_diff(closed_form_equilibrium(instance)) <= 1e-8


def test_fixed_point_is_unique_across_starts_and_schedules(table2):
    for seed in range(50):
        instance = table2(seed)
        oracle = closed_form_equilibrium(instance)
        for init in InitPolicy:
            for schedule in Schedule:
                report = solve(instance, config=SolverConfig(epsilon=1e-12, schedule=schedule, init=init, seed=seed))
                assert report.converged, (seed, init, schedule)
                assert report.prices.max_abs_diff(oracle) <= 1e-8, (seed, init, schedule)


def test_schedules_agree_within_ten_epsilon(build_instance):
    instance = build_instance([0.1, 0.3], [0.5, 0.5], [(0.2, 100.0)], kappa_m=1.0, delta=0.0)
    config = SolverConfig()
    reports = [solve(instance, config=SolverConfig(schedule=s, seed=3)) for s in Schedule]
    for a in reports:
        for b in reports:
            assert a.prices.max_abs_diff(b.prices) <= 10 * config.epsilon


def test_async_reports_micro_steps(e2):
    report = solve(e2, config=SolverConfig(schedule="async", seed=9))
    assert report.schedule is Schedule.ASYNC_RANDOM_FAIR
    assert report.micro_steps == report.iterations * e2.dimension


def test_upper_bound_is_supersolution(e1, e2, table2):
    assert feasible_upper_bound(e1).buyer_prices[0] == pytest.approx(5.55)
    assert feasible_upper_bound(e2).buyer_prices == pytest.approx([3.5, 3.5])
    for seed in range(50):
        instance = table2(seed)
        bound = feasible_upper_bound(instance)
        assert np.all(joint_operator(instance, bound).as_array() <= bound.as_array() + 1e-12)


def test_upper_bound_rejects_a_bound_below_the_fixed_point(e1, monkeypatch):
    offsets = solver_module.buyer_offsets
    monkeypatch.setattr(solver_module, "buyer_offsets", lambda index, params: 0.5 * offsets(index, params))
    with pytest.raises(SolverError):
        feasible_upper_bound(e1)


def test_descent_from_above_is_monotone(table2):
    instance = table2(8)
    start = initial_prices(instance, policy=InitPolicy.UPPER_BOUND)
    states = [s.as_array() for s in sweeps(instance, start, 60)]
    for before, after in zip(states, states[1:]):
        assert np.all(after <= before + 1e-12)


def test_iterates_respect_floors_and_ceiling(table2):
    for seed in range(20):
        instance = table2(seed)
        index = instance.index
        report = solve(instance, config=SolverConfig(init=InitPolicy.ZERO))
        prices = report.prices
        bound = feasible_upper_bound(instance)
        assert np.all(prices.buyer_prices >= index.kappa_m[index.buyer_model])
        assert np.all(prices.data_prices >= index.kappa_d)
        assert np.all(prices.as_array() <= bound.as_array() + 1e-12)


def test_non_convergence_is_reported(e1):
    report = solve(e1, config=SolverConfig(epsilon=1e-14, max_iterations=1))
    assert not report.converged
    assert report.iterations == 1
    assert report.final_residual > 1e-14


def test_trace_and_inconsistency(table2):
    instance = table2(12)
    report = solve(instance)
    trace = np.array(report.residual_trace)
    assert np.all(np.isfinite(trace)) and np.all(trace >= 0)
    assert len(trace) == report.iterations + 1
    assert report.inconsistency <= instance.dimension * 1e-20 * (1 + 1e-9)


def test_initial_prices(e1, e2):
    caps = initial_prices(e1)
    assert caps.data_prices[0] == 3.0 and caps.buyer_prices[0] == 2.0
    assert initial_prices(e2).data_prices == pytest.approx([0.1, 0.3])
    assert np.all(initial_prices(e2, policy=InitPolicy.ZERO).as_array() == 0)
    bound = feasible_upper_bound(e2).as_array()
    random_start = initial_prices(e2, policy=InitPolicy.RANDOM, rng=np.random.default_rng(0)).as_array()
    assert np.all(random_start >= 0) and np.all(random_start <= 2 * bound)


def test_fair_order_refreshes_every_coordinate():
    d = 10
    window = ASYNC_FAIRNESS_SWEEPS * d
    last = np.zeros(d, dtype=int)
    for step, c in enumerate(fair_update_order(d, 5000, np.random.default_rng(2)), start=1):
        assert np.all(step - last <= window)
        last[c] = step


def test_cobweb_trace(e1):
    points = cobweb_trace(e1, 1)
    assert len(points) == 3
    assert points[0] == (2.0, 3.0)
    assert points[1] == pytest.approx((2.0, 0.2 + 0.6 * 2 / 1.1))
    assert points[2] == pytest.approx((2 + 1.1 * points[1][1], points[1][1]))
    final = cobweb_trace(e1, 200)[-1]
    assert final == pytest.approx((5.55, 0.2 + 0.6 * 5.55 / 1.1), abs=1e-9)


def test_cobweb_needs_two_edges(e2):
    with pytest.raises(ConfigurationError):
        cobweb_trace(e2, 3)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(epsilon=0.0)
    with pytest.raises(ConfigurationError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ConfigurationError):
        SolverConfig(schedule="gauss")
    assert SolverConfig(schedule="block").schedule is Schedule.BLOCK_ALTERNATING
    config = SolverConfig.from_settings(Settings(epsilon=1e-8, schedule="async"), max_iterations=50, seed=None)
    assert config.epsilon == 1e-8
    assert config.max_iterations == 50
    assert config.schedule is Schedule.ASYNC_RANDOM_FAIR
