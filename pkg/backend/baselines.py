"""
Comparison pricing pipelines: supply-first, demand-first and broker-centric,
plus staged propagation used to compare them against the joint fixed point
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from backend.errors import ConfigurationError
from backend.market import MarketInstance, PriceVector
from backend.quotation import DEFAULT_PARAMS, QuotationParams, buyer_offsets, data_offsets, quote_buyers, quote_data
from backend.solver import InitPolicy, SolverConfig, initial_prices, solve, sweeps

logger = logging.getLogger(__name__)


class Method(Enum):
    """Pricing method selectable by name"""
    TRIPLEWIN = "triplewin"
    SUPPLY_FIRST = "sf"
    DEMAND_FIRST = "df"
    BROKER_CENTRIC = "bc"

    @classmethod
    def parse(cls, name: str) -> "Method":
        long_names = {
            "supply_first": cls.SUPPLY_FIRST,
            "demand_first": cls.DEMAND_FIRST,
            "broker_centric": cls.BROKER_CENTRIC,
        }
        if name in long_names:
            return long_names[name]
        try:
            return cls(name)
        except ValueError:
            raise ConfigurationError(
                f"Unknown method {name!r}; expected one of {[m.value for m in cls]}"
            ) from None

    @property
    def label(self) -> str:
        return self.value


BASELINE_METHODS = (Method.SUPPLY_FIRST, Method.DEMAND_FIRST, Method.BROKER_CENTRIC)


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs shared by the comparison pipelines"""
    quantile: float = 0.5           # broker-centric reserve quantile
    propagation_rounds: int = 5     # default depth of staged_propagation

    def __post_init__(self):
        if not 0.0 <= self.quantile <= 1.0:
            raise ConfigurationError(f"quantile must lie in [0, 1], got {self.quantile}")
        if self.propagation_rounds < 0:
            raise ConfigurationError(f"propagation_rounds must be >= 0, got {self.propagation_rounds}")


DEFAULT_BASELINE = BaselineConfig()


def supply_first(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """
    Sellers post their caps; buyer prices follow from one downstream pass

    Raises:
        ConfigurationError: some dataset-model edge has no cap
    """
    index = instance.index
    missing = [key for key, cap in zip(index.data_keys, index.cap) if np.isnan(cap)]
    if missing:
        raise ConfigurationError(f"Supply-first pricing needs a cap on every data edge; missing {missing}")
    data = index.cap.copy()
    return PriceVector.from_arrays(index, quote_buyers(instance, data, params), data)


def demand_first(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """Buyers bid low at kappa_M; data prices follow from one upstream pass"""
    index = instance.index
    buyer = buyer_offsets(index, params)
    return PriceVector.from_arrays(index, buyer, quote_data(instance, buyer, params))


def broker_centric(instance: MarketInstance, quantile: float = 0.5,
                   params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """
    Producer targets the q-quantile of its buyers' reserves, backs out the markup
    that prices floor-cost data at that target, then pays data sellers one
    upstream pass with that markup in place of delta
    """
    if not 0.0 <= quantile <= 1.0:
        raise ConfigurationError(f"quantile must lie in [0, 1], got {quantile}")
    index = instance.index
    kappa_m = params.fee_factor * params.alpha_km * index.kappa_m
    floor_spend = index.per_model_sum(data_offsets(index, params))

    model_price = np.empty(index.n_models)
    markup = np.empty(index.n_models)
    for j in range(index.n_models):
        reserves = index.reserve[index.buyer_model == j]
        target = float(np.quantile(reserves, quantile))
        implied = (target - kappa_m[j]) / floor_spend[j] - 1.0
        if implied < 0:
            logger.debug(f"Broker markup for {index.model_ids[j]} clamps at 0 (target {target:.4f})")
            markup[j] = 0.0
            model_price[j] = kappa_m[j] + floor_spend[j]
        else:
            markup[j] = implied
            model_price[j] = target

    buyer = model_price[index.buyer_model]
    revenue = index.per_model_revenue(buyer)
    data = data_offsets(index, params) + index.sv * (revenue / (1.0 + markup))[index.data_model]
    return PriceVector.from_arrays(index, buyer, data)


def price(instance: MarketInstance, method: Method, params: QuotationParams = DEFAULT_PARAMS,
          baseline: BaselineConfig = DEFAULT_BASELINE, config: Optional[SolverConfig] = None) -> PriceVector:
    """Final prices of any method; TripleWin solves to the fixed point"""
    if method is Method.TRIPLEWIN:
        return solve(instance, params, config).prices
    if method is Method.SUPPLY_FIRST:
        return supply_first(instance, params)
    if method is Method.DEMAND_FIRST:
        return demand_first(instance, params)
    return broker_centric(instance, baseline.quantile, params)


@dataclass
class PropagationResult:
    method: Method
    stages: List[PriceVector]
    converged: PriceVector

    def stage(self, rounds: int) -> PriceVector:
        return self.stages[rounds]


def staged_propagation(instance: MarketInstance, method: Method, rounds: Optional[int] = None,
                       params: QuotationParams = DEFAULT_PARAMS, baseline: BaselineConfig = DEFAULT_BASELINE,
                       config: Optional[SolverConfig] = None) -> PropagationResult:
    """
    Price state after 0..rounds applications of a method's update, starting
    from the cap-based initialization. Baselines re-apply their single pass,
    which does not depend on the current state; TripleWin applies Q sweeps.
    The converged entry is the fixed point for TripleWin and the pass output otherwise.
    rounds defaults to baseline.propagation_rounds.
    """
    if rounds is None:
        rounds = baseline.propagation_rounds
    if rounds < 0:
        raise ConfigurationError(f"rounds must be >= 0, got {rounds}")
    start = initial_prices(instance, params, InitPolicy.CAPS)
    if method is Method.TRIPLEWIN:
        stages = sweeps(instance, start, rounds, params)
        config = config or SolverConfig()
        converged = solve(instance, params, SolverConfig(
            epsilon=config.epsilon,
            max_iterations=config.max_iterations,
            schedule=config.schedule,
            seed=config.seed,
            initial_prices=start,
        )).prices
        return PropagationResult(method, stages, converged)

    single_pass = price(instance, method, params, baseline)
    return PropagationResult(method, [start] + [single_pass] * rounds, single_pass)
