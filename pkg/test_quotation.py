"""
Tests for the quotation operator and its residuals
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backend.errors import ConfigurationError, StructuralError
from backend.market import PriceVector
from backend.quotation import (
    QuotationParams,
    effective_revenue,
    joint_operator,
    market_inconsistency,
    offsets,
    quote_buyers,
    quote_data,
    residual,
)

E1_PB = 5.55
E1_PD = 0.2 + 0.6 * 5.55 / 1.1


def _e1_fixed_point(e1) -> PriceVector:
    return PriceVector.from_arrays(e1.index, np.array([E1_PB]), np.array([E1_PD]))


def test_effective_revenue(e1, e2):
    assert effective_revenue(e1, np.array([0.0])) == {"M1": 0.0}
    assert effective_revenue(e1, np.array([5.55]))["M1"] == pytest.approx(3.33)
    assert effective_revenue(e2, np.array([3.5, 3.5]))["M1"] == pytest.approx(2.1)


def test_buyer_quotes(e1, e2):
    assert quote_buyers(e1, np.array([0.0])) == pytest.approx([2.0])
    assert quote_buyers(e1, np.array([E1_PD])) == pytest.approx([E1_PB], abs=1e-12)
    assert quote_buyers(e1, np.array([0.0]), QuotationParams(fee_factor=2.0)) == pytest.approx([4.0])
    # Every buyer of a model gets the same quote
    quotes = quote_buyers(e2, np.array([0.94, 1.56]))
    assert quotes[0] == quotes[1] == pytest.approx(3.5)


def test_data_quotes(e1, e2):
    assert quote_data(e1, np.array([0.0])) == pytest.approx([0.2])
    assert quote_data(e1, np.array([E1_PB])) == pytest.approx([E1_PD], abs=1e-12)
    assert quote_data(e2, np.array([3.5, 3.5])) == pytest.approx([0.94, 1.56])


def test_zero_prices_give_offsets(table2):
    instance = table2(2)
    params = QuotationParams(fee_factor=1.5, alpha_kd=2.0, alpha_km=0.5)
    zero = PriceVector.zeros(instance.index)
    assert np.allclose(joint_operator(instance, zero, params).as_array(), offsets(instance, params).as_array())


def test_fixed_point_is_reproduced(e1):
    p = _e1_fixed_point(e1)
    assert joint_operator(e1, p).max_abs_diff(p) <= 1e-12
    assert residual(e1, p) <= 1e-12


def test_residual_by_hand(e1):
    p = PriceVector.from_arrays(e1.index, np.array([5.0]), np.array([3.0]))
    vb = 2 + 1.1 * 3
    vd = 0.2 + 0.6 * 5 / 1.1
    expected = math.sqrt((vb - 5.0) ** 2 + (vd - 3.0) ** 2) / math.sqrt(2)
    assert residual(e1, p) == pytest.approx(expected, rel=1e-12)
    assert market_inconsistency(e1, p) == pytest.approx(2 * expected ** 2, rel=1e-12)


def test_residual_at_zero_is_offset_norm(e2):
    zero = PriceVector.zeros(e2.index)
    expected = np.linalg.norm([1.0, 1.0, 0.1, 0.3]) / 2.0
    assert residual(e2, zero) == pytest.approx(expected)


def test_operator_is_scalable_and_monotone(table2):
    # Standard interference properties, checked on random markets and states
    rng = np.random.default_rng(5)
    for seed in range(100):
        instance = table2(seed, rho=float(rng.uniform(0.0, 0.99)))
        d = instance.dimension
        for _ in range(10):
            x = PriceVector.from_array(instance.index, rng.uniform(0, 50, size=d))
            y = PriceVector.from_array(instance.index, x.as_array() + rng.uniform(0, 10, size=d))
            qx = joint_operator(instance, x).as_array()
            qy = joint_operator(instance, y).as_array()
            assert np.all(qx > 0)
            assert np.all(qy >= qx - 1e-12)
            beta = float(rng.uniform(1.01, 5.0))
            q_scaled = joint_operator(instance, x.scaled(beta)).as_array()
            assert np.all(beta * qx > q_scaled)


def test_scaling_gap_equals_scaled_offsets(table2):
    rng = np.random.default_rng(21)
    for seed in range(40):
        instance = table2(seed, rho=float(rng.uniform(0.0, 0.99)))
        params = QuotationParams(fee_factor=float(rng.uniform(1.0, 2.0)), alpha_delta=float(rng.uniform(0.0, 3.0)))
        base = offsets(instance, params).as_array()
        for _ in range(5):
            p = PriceVector.from_array(instance.index, rng.uniform(0, 50, size=instance.dimension))
            beta = float(rng.uniform(1.0, 5.0))
            gap = (beta * joint_operator(instance, p, params).as_array()
                   - joint_operator(instance, p.scaled(beta), params).as_array())
            assert np.max(np.abs(gap - (beta - 1) * base)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(
    state=st.lists(st.floats(0, 100), min_size=4, max_size=4),
    bump=st.lists(st.floats(0, 20), min_size=4, max_size=4),
    beta=st.floats(1.01, 5.0),
)
def test_operator_axioms_on_two_seller_market(e2, state, bump, beta):
    x = PriceVector.from_array(e2.index, np.array(state))
    y = PriceVector.from_array(e2.index, np.array(state) + np.array(bump))
    qx = joint_operator(e2, x).as_array()
    assert np.all(qx > 0)
    assert np.all(joint_operator(e2, y).as_array() >= qx - 1e-12)
    q_scaled = joint_operator(e2, x.scaled(beta)).as_array()
    assert np.all(beta * qx > q_scaled)
    assert np.max(np.abs(beta * qx - q_scaled - (beta - 1) * offsets(e2).as_array())) <= 1e-10


def test_parameter_validation():
    with pytest.raises(ConfigurationError):
        QuotationParams(fee_factor=0.5)
    with pytest.raises(ConfigurationError):
        QuotationParams(alpha_kd=0.0)
    with pytest.raises(ConfigurationError):
        QuotationParams(alpha_delta=-1.0)
    with pytest.raises(ConfigurationError):
        QuotationParams(alpha_km=float("nan"))
    with pytest.raises(ConfigurationError):
        QuotationParams.from_fee(1.0)
    assert QuotationParams.from_fee(0.5).fee_factor == pytest.approx(2.0)
    assert QuotationParams(fee_factor=4.0).tau == pytest.approx(0.75)


def test_misaligned_input_is_structural_error(e1, e2):
    with pytest.raises(StructuralError):
        quote_buyers(e1, np.array([0.1, 0.2]))
    with pytest.raises(StructuralError):
        joint_operator(e2, PriceVector.zeros(e1.index))
