"""
Quotation mappings of the coupled market
Buyer-side and data-side quotes, their fee-adjusted form, the joint operator Q and its residual
"""

import math
import numbers
import logging
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from backend.errors import ConfigurationError, StructuralError
from backend.market import EdgeIndex, MarketInstance, PriceVector

logger = logging.getLogger(__name__)

PriceInput = Union[PriceVector, np.ndarray]


@dataclass(frozen=True)
class QuotationParams:
    """
    Operator parameters: fee grossing factor alpha = 1/(1-tau) and global
    scalings of the stored offsets and margins. All ones is the plain market.
    """
    fee_factor: float = 1.0
    alpha_kd: float = 1.0
    alpha_km: float = 1.0
    alpha_delta: float = 1.0

    def __post_init__(self):
        for name in ("fee_factor", "alpha_kd", "alpha_km", "alpha_delta"):
            value = getattr(self, name)
            if not isinstance(value, numbers.Real) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite number, got {value!r}")
        if self.fee_factor < 1:
            raise ConfigurationError(f"fee factor must be >= 1, got {self.fee_factor}")
        if self.alpha_kd <= 0 or self.alpha_km <= 0:
            raise ConfigurationError(
                f"offset scalings must be positive, got alpha_kd={self.alpha_kd}, alpha_km={self.alpha_km}"
            )
        if self.alpha_delta < 0:
            raise ConfigurationError(f"alpha_delta must be nonnegative, got {self.alpha_delta}")

    @classmethod
    def from_fee(cls, tau: float, **scalings: float) -> "QuotationParams":
        if not 0 <= tau < 1:
            raise ConfigurationError(f"fee tau must lie in [0, 1), got {tau}")
        return cls(fee_factor=1.0 / (1.0 - tau), **scalings)

    @property
    def tau(self) -> float:
        return 1.0 - 1.0 / self.fee_factor


DEFAULT_PARAMS = QuotationParams()


def buyer_offsets(index: EdgeIndex, params: QuotationParams) -> np.ndarray:
    """alpha * alpha_km * kappa_M laid out on buyer edges"""
    return params.fee_factor * params.alpha_km * index.kappa_m[index.buyer_model]


def data_offsets(index: EdgeIndex, params: QuotationParams) -> np.ndarray:
    return params.fee_factor * params.alpha_kd * index.kappa_d


def margin_factor(index: EdgeIndex, params: QuotationParams) -> np.ndarray:
    """1 + alpha_delta * delta per model"""
    return 1.0 + params.alpha_delta * index.delta


def offsets(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """Q(0): the offset vector, kappa_M on buyer edges and kappa_D on data edges"""
    index = instance.index
    return PriceVector.from_arrays(index, buyer_offsets(index, params), data_offsets(index, params))


def _buyer_side(prices: PriceInput, index: EdgeIndex) -> np.ndarray:
    if isinstance(prices, PriceVector):
        prices.check_aligned(index)
        return prices.buyer_prices
    values = np.asarray(prices, dtype=float)
    if values.shape != (index.n_buyer_edges,):
        raise StructuralError(f"Expected {index.n_buyer_edges} buyer prices, got {values.shape}")
    return values


def _data_side(prices: PriceInput, index: EdgeIndex) -> np.ndarray:
    if isinstance(prices, PriceVector):
        prices.check_aligned(index)
        return prices.data_prices
    values = np.asarray(prices, dtype=float)
    if values.shape != (index.n_data_edges,):
        raise StructuralError(f"Expected {index.n_data_edges} data prices, got {values.shape}")
    return values


def effective_revenue_array(index: EdgeIndex, buyer_prices: np.ndarray) -> np.ndarray:
    return index.per_model_revenue(buyer_prices)


def effective_revenue(instance: MarketInstance, prices: PriceInput) -> Dict[str, float]:
    """
    Effective training revenue W_j = sum_k omega_jk * p_{B_k->M_j}

    Args:
        instance: Market instance
        prices: PriceVector, or an array of buyer-edge prices

    Returns:
        Map model id -> W_j
    """
    index = instance.index
    revenue = effective_revenue_array(index, _buyer_side(prices, index))
    return {model_id: float(w) for model_id, w in zip(index.model_ids, revenue)}


def quote_buyers(instance: MarketInstance, data_prices: PriceInput,
                 params: QuotationParams = DEFAULT_PARAMS) -> np.ndarray:
    """
    v_B = alpha*alpha_km*kappa_M + (1 + alpha_delta*delta) * sum_i p_{D_i->M_j},
    identical for every buyer of a model
    """
    index = instance.index
    spend = index.per_model_sum(_data_side(data_prices, index))
    per_model = (params.fee_factor * params.alpha_km * index.kappa_m
                 + margin_factor(index, params) * spend)
    return per_model[index.buyer_model]


def quote_data(instance: MarketInstance, buyer_prices: PriceInput,
               params: QuotationParams = DEFAULT_PARAMS) -> np.ndarray:
    """v_D = alpha*alpha_kd*kappa_D + SV_{i|j} * W_j / (1 + alpha_delta*delta)"""
    index = instance.index
    revenue = effective_revenue_array(index, _buyer_side(buyer_prices, index))
    pass_through = revenue / margin_factor(index, params)
    return data_offsets(index, params) + index.sv * pass_through[index.data_model]


def joint_operator(instance: MarketInstance, prices: PriceVector,
                   params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """Q(p) = [Q_B(p_D); Q_D(p_B)]"""
    index = instance.index
    prices.check_aligned(index)
    return PriceVector.from_arrays(
        index,
        quote_buyers(instance, prices.data_prices, params),
        quote_data(instance, prices.buyer_prices, params),
    )


def _gap(instance: MarketInstance, prices: PriceVector, params: QuotationParams) -> np.ndarray:
    return joint_operator(instance, prices, params).as_array() - prices.as_array()


def residual(instance: MarketInstance, prices: PriceVector,
             params: QuotationParams = DEFAULT_PARAMS) -> float:
    """Normalized fixed-point residual ||Q(p) - p||_2 / sqrt(d)"""
    d = prices.dimension
    if d == 0:
        return 0.0
    return float(np.linalg.norm(_gap(instance, prices, params)) / math.sqrt(d))


def market_inconsistency(instance: MarketInstance, prices: PriceVector,
                         params: QuotationParams = DEFAULT_PARAMS) -> float:
    """Least-squares market inconsistency ||Q(p) - p||_2^2"""
    gap = _gap(instance, prices, params)
    return float(np.dot(gap, gap))
