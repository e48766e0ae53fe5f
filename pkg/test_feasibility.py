"""
Tests for envelopes, global feasibility, numerical frontiers, offset monotonicity and the max fee
"""

import math

import numpy as np
import pytest

from backend.errors import ConfigurationError
from backend.feasibility import (
    Axis,
    PointStatus,
    analytic_axis_max,
    bisect_max_fee,
    envelope_alpha_delta_vs_alphaD,
    envelope_alpha_delta_vs_alphaM,
    envelope_kD_vs_kM,
    envelope_kM_vs_kD,
    fee_price_slope,
    fee_tightness,
    global_feasibility,
    max_uniform_fee,
    numerical_frontier,
    offset_monotonicity_check,
    verify_max_fee,
)
from backend.quotation import QuotationParams
from backend.solver import SolverConfig, closed_form_equilibrium, solve


def test_margin_envelope_by_hand(e1):
    points = envelope_alpha_delta_vs_alphaD(e1, alpha_km=1.0, alpha_kd_grid=[1.0, 2.0]).points
    assert points[0].analytic == pytest.approx(1890.0)
    assert points[1].analytic == pytest.approx(940.0)
    assert points[0].binding_model == "M1" and points[0].binding_buyer == "B1"
    assert envelope_alpha_delta_vs_alphaM(e1, alpha_kd=1.0, alpha_km_grid=[1.0]).points[0].analytic \
        == pytest.approx(1890.0)


def test_offset_envelopes_by_hand(e1):
    assert envelope_kM_vs_kD(e1, 1.0, [1.0]).points[0].analytic == pytest.approx(19.89)
    assert envelope_kD_vs_kM(e1, 1.0, [1.0]).points[0].analytic == pytest.approx(38 / 0.22)
    tiny = envelope_kM_vs_kD(e1, 1.0, [1e-9]).points[0].analytic
    assert tiny == pytest.approx(20.0, abs=1e-6)


def test_envelope_is_decreasing_in_the_other_axis(table2):
    instance = table2(1)
    values = [p.analytic for p in envelope_alpha_delta_vs_alphaD(instance, 1.0, [0.25, 0.5, 1.0, 2.0]).points
              if p.status is PointStatus.FEASIBLE]
    assert values == sorted(values, reverse=True)


def test_empty_region_is_flagged(build_instance):
    # R = 10 cannot cover kappa_M = 2 plus rho * R_bar = 9
    tight = build_instance([0.2], [1.0], [(0.9, 10.0)], kappa_m=2.0, delta=0.1)
    bound = analytic_axis_max(tight, Axis.ALPHA_DELTA, {Axis.ALPHA_KD: 1.0, Axis.ALPHA_KM: 1.0})
    assert bound.status is PointStatus.EMPTY
    assert bound.value == 0.0
    assert not global_feasibility(tight)


def test_margin_free_models_do_not_bound_alpha_delta(e2):
    bound = analytic_axis_max(e2, Axis.ALPHA_DELTA, {Axis.ALPHA_KD: 1.0, Axis.ALPHA_KM: 1.0})
    assert bound.status is PointStatus.FEASIBLE
    assert math.isinf(bound.value)


def test_global_feasibility(e1, build_instance):
    verdict = global_feasibility(e1)
    assert verdict and verdict.min_slack == pytest.approx(38 - 0.22)
    assert not global_feasibility(e1, alpha_delta=1891.0)
    assert global_feasibility(e1, alpha_delta=1890.0 * 0.999)
    uncoupled = build_instance([0.01], [1.0], [(0.0, 100.0)], kappa_m=0.5, delta=0.1)
    assert global_feasibility(uncoupled)
    with pytest.raises(ConfigurationError):
        global_feasibility(e1, alpha_kd=0.0)


def test_feasibility_is_downward_closed(table2):
    rng = np.random.default_rng(4)
    instance = table2(6)
    for _ in range(500):
        a = rng.uniform(0.01, 3.0, size=3)
        shrink = a * rng.uniform(0.0, 1.0, size=3)
        shrink[:2] = np.maximum(shrink[:2], 1e-6)
        if global_feasibility(instance, *a):
            assert global_feasibility(instance, *shrink)


def test_envelope_is_sufficient(table2):
    rng = np.random.default_rng(8)
    checked = 0
    for seed in range(25):
        instance = table2(seed)
        for _ in range(4):
            a_kd, a_km, a_delta = rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.0, 20.0)
            if not global_feasibility(instance, a_kd, a_km, a_delta):
                continue
            params = QuotationParams(alpha_kd=a_kd, alpha_km=a_km, alpha_delta=a_delta)
            assert solve(instance, params).acceptance.buyer_feasible
            checked += 1
    assert checked > 0


def test_numerical_frontier_is_tight_for_one_buyer(e1):
    envelope = numerical_frontier(e1, Axis.ALPHA_KD, Axis.ALPHA_DELTA, [1.0])
    point = envelope.points[0]
    assert point.numeric_status is PointStatus.FEASIBLE
    assert point.numeric == pytest.approx(1890.0, rel=1e-3)


def test_numerical_frontier_dominates_envelope(table2):
    for seed in range(3):
        instance = table2(seed, rho=0.4)
        envelope = numerical_frontier(instance, Axis.ALPHA_KD, Axis.ALPHA_KM, [0.5, 1.0], fixed_value=1.0)
        for point in envelope.points:
            if point.status is PointStatus.FEASIBLE:
                assert point.numeric >= point.analytic - 2e-6


def test_single_point_frontier_matches_global_feasibility(e1):
    point = numerical_frontier(e1, Axis.ALPHA_KD, Axis.ALPHA_KM, [1.0]).points[0]
    assert global_feasibility(e1, alpha_kd=1.0, alpha_km=point.numeric * 0.999)
    assert not global_feasibility(e1, alpha_kd=1.0, alpha_km=point.numeric * 1.001)


def test_frontier_of_empty_point(build_instance):
    tight = build_instance([0.2], [1.0], [(0.9, 10.0)], kappa_m=2.0, delta=0.1)
    point = numerical_frontier(tight, Axis.ALPHA_KM, Axis.ALPHA_DELTA, [1.0]).points[0]
    assert point.status is PointStatus.EMPTY
    assert point.numeric_status is PointStatus.EMPTY
    assert point.numeric == 0.0


def test_envelope_axes_must_differ(e1):
    with pytest.raises(ConfigurationError):
        numerical_frontier(e1, Axis.ALPHA_KD, Axis.ALPHA_KD, [1.0])


def test_raising_model_offset(e1):
    report = offset_monotonicity_check(e1, kappa_m_increments={"M1": 1.0})
    assert report.passed
    assert report.raised.buyer_prices[0] == pytest.approx(8.05, abs=1e-9)
    assert report.raised.data_prices[0] == pytest.approx(0.2 + 0.6 * 8.05 / 1.1, abs=1e-9)


def test_zero_increments_leave_prices_unchanged(e2):
    report = offset_monotonicity_check(e2, kappa_d_increments={"D1": 0.0})
    assert report.passed
    assert report.raised.max_abs_diff(report.base) <= 1e-12


def test_raising_one_dataset(e2):
    report = offset_monotonicity_check(e2, kappa_d_increments={"D1": 0.05})
    assert report.passed
    assert report.raised.data_prices[0] > report.base.data_prices[0]
    assert np.all(report.raised.as_array() >= report.base.as_array())


def test_monotonicity_on_random_increments(table2):
    rng = np.random.default_rng(10)
    for seed in range(100):
        instance = table2(seed)
        kd = {d.id: float(rng.uniform(0, 0.2)) for d in instance.datasets if rng.random() < 0.3}
        km = {m.id: float(rng.uniform(0, 1.0)) for m in instance.models if rng.random() < 0.3}
        report = offset_monotonicity_check(instance, kd, km)
        assert report.passed, (seed, report.weak_violations, report.strict_failures)


def test_negative_increment_is_rejected(e1):
    with pytest.raises(ConfigurationError):
        offset_monotonicity_check(e1, kappa_m_increments={"M1": -0.5})


def test_max_fee_by_hand(e1):
    fee = max_uniform_fee(e1)
    assert fee.alpha_star == pytest.approx(0.4 * 100 / 2.22)
    assert fee.tau_star == pytest.approx(1 - 2.22 / 40)
    assert fee.binding_model == "M1"
    assert not fee.clamped


def test_max_fee_clamps_at_zero(build_instance):
    priced_out = build_instance([0.2], [1.0], [(0.6, 5.0)], kappa_m=2.0, delta=0.1)
    fee = max_uniform_fee(priced_out)
    assert fee.alpha_star < 1
    assert fee.tau_star == 0.0
    assert fee.clamped


def test_max_fee_is_tight(e1, table2):
    for instance in [e1] + [table2(seed) for seed in range(10)]:
        verification = verify_max_fee(instance)
        assert verification.passed, verification


def test_bisected_fee_matches_formula(e1, table2):
    for instance in (e1, table2(2), table2(5)):
        tau_star = max_uniform_fee(instance).tau_star
        assert bisect_max_fee(instance, config=SolverConfig(epsilon=1e-12)) == pytest.approx(tau_star, abs=1e-6)


def test_fee_slope_is_linear_in_alpha(table2):
    instance = table2(3)
    slope = fee_price_slope(instance)
    index = instance.index
    for alpha in (1.0, 1.5, 3.0):
        prices = closed_form_equilibrium(instance, QuotationParams(fee_factor=alpha)).buyer_prices
        for j, model_id in enumerate(index.model_ids):
            assert prices[index.buyer_model == j] == pytest.approx(alpha * slope[model_id])


def test_binding_model_is_tight_at_alpha_star(table2):
    instance = table2(9)
    fee = max_uniform_fee(instance)
    tightness = {t.model_id: t for t in fee_tightness(instance, fee.alpha_star)}
    assert tightness[fee.binding_model].slack == pytest.approx(0.0, abs=1e-9)
    assert all(t.slack >= -1e-9 for t in tightness.values())
