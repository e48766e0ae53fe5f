"""
Market outcome metrics: buyer surplus, seller profit, revenue shares and
rank agreement between revenue shares and Shapley shares
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.stats import spearmanr

from backend.market import MarketInstance, PriceVector, acceptance_check
from backend.quotation import DEFAULT_PARAMS, QuotationParams, data_offsets, margin_factor
from backend.solver import equilibrium_model_price

logger = logging.getLogger(__name__)


def buyer_surplus(instance: MarketInstance, prices: PriceVector) -> np.ndarray:
    """R - p_B per buyer edge"""
    prices.check_aligned(instance.index)
    return instance.index.reserve - prices.buyer_prices


def seller_profit(instance: MarketInstance, prices: PriceVector) -> np.ndarray:
    """p_D - kappa_D per data edge"""
    prices.check_aligned(instance.index)
    return prices.data_prices - instance.index.kappa_d


def revenue_shares(instance: MarketInstance, prices: PriceVector) -> Dict[str, Dict[str, float]]:
    """Per model, each dataset's fraction p_{D_i->M_j} / sum_i p_{D_i->M_j}"""
    index = instance.index
    prices.check_aligned(index)
    totals = index.per_model_sum(prices.data_prices)
    out: Dict[str, Dict[str, float]] = {m: {} for m in index.model_ids}
    for (dataset_id, model_id), p, j in zip(index.data_keys, prices.data_prices, index.data_model):
        out[model_id][dataset_id] = float(p / totals[j]) if totals[j] > 0 else math.nan
    return out


def rank_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """
    Spearman correlation with average ranks for ties.
    Two constant vectors agree perfectly (1.0); one constant vector leaves it undefined (nan).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] < 2:
        return math.nan
    x_flat = bool(np.all(x == x[0]))
    y_flat = bool(np.all(y == y[0]))
    if x_flat and y_flat:
        return 1.0
    if x_flat or y_flat:
        return math.nan
    rho = float(spearmanr(x, y)[0])
    return min(1.0, max(-1.0, rho))


def spearman_by_model(instance: MarketInstance, prices: PriceVector) -> Dict[str, float]:
    """Rank correlation between SV_{i|j} and realized revenue shares, per model (nan when skipped)"""
    shares = revenue_shares(instance, prices)
    out = {}
    for model_id, column in shares.items():
        if len(column) < 2:
            logger.info(f"Skipping Spearman for {model_id}: fewer than two datasets")
            out[model_id] = math.nan
            continue
        sv = instance.shapley.shares[model_id]
        datasets = list(column)
        value = rank_correlation(np.array([sv[d] for d in datasets]), np.array([column[d] for d in datasets]))
        if math.isnan(value):
            logger.info(f"Skipping Spearman for {model_id}: ranks undefined")
        out[model_id] = value
    return out


def revenue_share_identity(instance: MarketInstance, prices: PriceVector,
                           params: QuotationParams = DEFAULT_PARAMS) -> float:
    """
    Largest deviation of realized shares from (kappa_D + c_j SV) / sum(...) with
    c_j = rho_j p*_{M_j} / (1 + delta_j) taken from the closed-form equilibrium.
    Zero at the joint fixed point, positive for prices that miss it.
    """
    index = instance.index
    shares = revenue_shares(instance, prices)
    c = index.rho * equilibrium_model_price(index, params) / margin_factor(index, params)
    predicted = data_offsets(index, params) + c[index.data_model] * index.sv
    predicted = predicted / index.per_model_sum(predicted)[index.data_model]
    realized = np.array([shares[m][d] for d, m in index.data_keys])
    return float(np.max(np.abs(realized - predicted))) if realized.size else 0.0


@dataclass
class MetricsRecord:
    """Outcome of one method at one propagation stage"""
    method: str
    stage: str
    buyer_surplus: np.ndarray
    seller_profit: np.ndarray
    spearman: Dict[str, float] = field(default_factory=dict)
    success_rate: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success_rate must lie in [0, 1], got {self.success_rate}")
        for model_id, value in self.spearman.items():
            if not math.isnan(value) and not -1.0 <= value <= 1.0:
                raise ValueError(f"Spearman for {model_id} out of range: {value}")

    @property
    def mean_spearman(self) -> float:
        values = [v for v in self.spearman.values() if not math.isnan(v)]
        return float(np.mean(values)) if values else math.nan


def compute_metrics(instance: MarketInstance, prices: PriceVector, method: str,
                    stage: str = "final") -> MetricsRecord:
    return MetricsRecord(
        method=method,
        stage=stage,
        buyer_surplus=buyer_surplus(instance, prices),
        seller_profit=seller_profit(instance, prices),
        spearman=spearman_by_model(instance, prices),
        success_rate=acceptance_check(instance, prices).success_rate,
    )
