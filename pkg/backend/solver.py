"""
Fixed-point solver for the joint quotation operator
Synchronous, block-alternating and asynchronous fair schedules, plus the
closed-form equilibrium and the supersolution used to bound it
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from backend.config import DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS, Settings
from backend.errors import ConfigurationError, SolverError
from backend.market import AcceptanceReport, EdgeIndex, MarketInstance, PriceVector, acceptance_check
from backend.quotation import (
    DEFAULT_PARAMS,
    QuotationParams,
    buyer_offsets,
    data_offsets,
    joint_operator,
    margin_factor,
    market_inconsistency,
    quote_buyers,
    quote_data,
)

logger = logging.getLogger(__name__)

# Every coordinate is refreshed at least once per this many sweeps in async mode
ASYNC_FAIRNESS_SWEEPS = 4

# Slack allowed on Q(p_bar) <= p_bar, relative to max(1, |p_bar|)
SUPERSOLUTION_RTOL = 1e-9


class Schedule(Enum):
    """Update order of the price iteration"""
    SYNCHRONOUS = "synchronous"
    BLOCK_ALTERNATING = "block_alternating"
    ASYNC_RANDOM_FAIR = "async_random_fair"

    @classmethod
    def parse(cls, name: str) -> "Schedule":
        aliases = {"sync": cls.SYNCHRONOUS, "block": cls.BLOCK_ALTERNATING, "async": cls.ASYNC_RANDOM_FAIR}
        if name in aliases:
            return aliases[name]
        try:
            return cls(name)
        except ValueError:
            raise ConfigurationError(
                f"Unknown schedule {name!r}; expected one of {sorted(aliases)} or {[s.value for s in cls]}"
            ) from None


class InitPolicy(Enum):
    """Starting point of the iteration"""
    CAPS = "caps"                 # p_D = cap (kappa_D when missing), p_B = kappa_M
    ZERO = "zero"
    UPPER_BOUND = "upper_bound"   # 10x the supersolution
    RANDOM = "random"             # uniform on [0, 2x supersolution]


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = DEFAULT_EPSILON
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    schedule: Schedule = Schedule.SYNCHRONOUS
    seed: int = 0
    init: InitPolicy = InitPolicy.CAPS
    initial_prices: Optional[PriceVector] = field(default=None, compare=False)

    def __post_init__(self):
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be an integer >= 1, got {self.max_iterations!r}")
        if not isinstance(self.schedule, Schedule):
            object.__setattr__(self, "schedule", Schedule.parse(self.schedule))
        if not isinstance(self.init, InitPolicy):
            try:
                object.__setattr__(self, "init", InitPolicy(self.init))
            except ValueError:
                raise ConfigurationError(f"Unknown initialization policy {self.init!r}") from None

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "SolverConfig":
        values = {
            "epsilon": settings.epsilon,
            "max_iterations": settings.max_iterations,
            "schedule": Schedule.parse(settings.schedule),
            "seed": settings.seed,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class EquilibriumReport:
    """Outcome of one solve"""
    instance_id: str
    prices: PriceVector
    iterations: int
    residual_trace: List[float]
    converged: bool
    schedule: Schedule
    acceptance: AcceptanceReport
    inconsistency: float
    params: QuotationParams = DEFAULT_PARAMS
    micro_steps: int = 0

    @property
    def final_residual(self) -> float:
        return self.residual_trace[-1]

    @property
    def buyer_feasible(self) -> bool:
        return self.acceptance.buyer_feasible

    def to_dict(self) -> Dict:
        """Convert to dictionary for serialization"""
        return {
            "instance_id": self.instance_id,
            "schedule": self.schedule.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "micro_steps": self.micro_steps,
            "final_residual": self.final_residual,
            "residual_trace": list(self.residual_trace),
            "market_inconsistency": self.inconsistency,
            "params": {
                "fee_factor": self.params.fee_factor,
                "alpha_kd": self.params.alpha_kd,
                "alpha_km": self.params.alpha_km,
                "alpha_delta": self.params.alpha_delta,
            },
            "acceptance": self.acceptance.to_dict(),
            "prices": self.prices.to_dict(),
        }


def closed_form_equilibrium(instance: MarketInstance,
                            params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """
    Fixed point in closed form:
    p_M = alpha (kappa_M + (1+delta) S) / (1 - rho) on every buyer edge of the model,
    p_D = alpha kappa_D + SV rho p_M / (1 + delta)
    """
    index = instance.index
    price_m = equilibrium_model_price(index, params)
    margin = margin_factor(index, params)
    data = data_offsets(index, params) + index.sv * (index.rho * price_m / margin)[index.data_model]
    return PriceVector.from_arrays(index, price_m[index.buyer_model], data)


def equilibrium_model_price(index: EdgeIndex, params: QuotationParams = DEFAULT_PARAMS) -> np.ndarray:
    """p_M per model at the fixed point"""
    spend = index.per_model_sum(params.alpha_kd * index.kappa_d)
    base = params.alpha_km * index.kappa_m + margin_factor(index, params) * spend
    return params.fee_factor * base / (1.0 - index.rho)


def feasible_upper_bound(instance: MarketInstance,
                         params: QuotationParams = DEFAULT_PARAMS) -> PriceVector:
    """
    Supersolution p_bar with Q(p_bar) <= p_bar: buyer edges at
    L_j = (max_k alpha kappa_M + (1+delta) S_j) / (1 - rho_j), data edges quoted from L_j.
    With one kappa_M per model L_j is the equilibrium buyer price itself.

    Raises:
        SolverError: Q(p_bar) exceeds p_bar on some edge
    """
    index = instance.index
    offset_max = np.zeros(index.n_models)
    np.maximum.at(offset_max, index.buyer_model, buyer_offsets(index, params))
    spend = index.per_model_sum(data_offsets(index, params))
    margin = margin_factor(index, params)
    bound_m = (offset_max + margin * spend) / (1.0 - index.rho)
    data = data_offsets(index, params) + index.sv * (index.rho * bound_m / margin)[index.data_model]
    bound = PriceVector.from_arrays(index, bound_m[index.buyer_model], data)

    excess = joint_operator(instance, bound, params).as_array() - bound.as_array()
    tolerance = SUPERSOLUTION_RTOL * np.maximum(1.0, np.abs(bound.as_array()))
    if np.any(excess > tolerance):
        worst = int(np.argmax(excess - tolerance))
        raise SolverError(
            f"Upper bound is not a supersolution for {instance.instance_id}: "
            f"Q exceeds it by {excess[worst]:.3e} at coordinate {worst}"
        )
    return bound


def initial_prices(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS,
                   policy: InitPolicy = InitPolicy.CAPS,
                   rng: Optional[np.random.Generator] = None) -> PriceVector:
    """Starting state for the iteration under the given policy"""
    index = instance.index
    if policy is InitPolicy.CAPS:
        data = np.where(np.isnan(index.cap), data_offsets(index, params), index.cap)
        return PriceVector.from_arrays(index, buyer_offsets(index, params), data)
    if policy is InitPolicy.ZERO:
        return PriceVector.zeros(index)
    bound = feasible_upper_bound(instance, params)
    if policy is InitPolicy.UPPER_BOUND:
        return bound.scaled(10.0)
    rng = rng if rng is not None else np.random.default_rng(0)
    return PriceVector.from_array(index, rng.uniform(0.0, 2.0 * bound.as_array()))


class _CoordinateOperator:
    """Single-coordinate evaluation of Q, straight from the current arrays"""

    def __init__(self, index: EdgeIndex, params: QuotationParams):
        self.nb = index.n_buyer_edges
        self.buyer_model = index.buyer_model
        self.data_model = index.data_model
        self.omega = index.omega
        self.sv = index.sv
        self.buyer_offset = buyer_offsets(index, params)
        self.data_offset = data_offsets(index, params)
        self.margin = margin_factor(index, params)
        self.data_of_model = [np.flatnonzero(index.data_model == j) for j in range(index.n_models)]
        self.buyers_of_model = [np.flatnonzero(index.buyer_model == j) for j in range(index.n_models)]

    def update(self, state: np.ndarray, c: int) -> None:
        buyer, data = state[:self.nb], state[self.nb:]
        if c < self.nb:
            j = self.buyer_model[c]
            state[c] = self.buyer_offset[c] + self.margin[j] * np.sum(data[self.data_of_model[j]])
        else:
            e = c - self.nb
            j = self.data_model[e]
            members = self.buyers_of_model[j]
            revenue = np.sum(self.omega[members] * buyer[members])
            state[c] = self.data_offset[e] + self.sv[e] * revenue / self.margin[j]


def fair_update_order(d: int, n_steps: int, rng: np.random.Generator) -> Iterator[int]:
    """
    Uniformly random coordinates, except that a coordinate idle for long enough
    is forced so that every coordinate is refreshed within ASYNC_FAIRNESS_SWEEPS * d steps
    """
    window = ASYNC_FAIRNESS_SWEEPS * d
    # Forcing starts d-1 steps early so d simultaneous stale coordinates all fit in the window
    threshold = window - d + 1
    last = np.zeros(d, dtype=np.int64)
    for step in range(1, n_steps + 1):
        stalest = int(np.argmin(last))
        if step - last[stalest] >= threshold:
            c = stalest
        else:
            c = int(rng.integers(d))
        last[c] = step
        yield c


def _normalized_norm(gap: np.ndarray) -> float:
    return float(np.linalg.norm(gap) / math.sqrt(gap.shape[0])) if gap.shape[0] else 0.0


def solve(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS,
          config: Optional[SolverConfig] = None) -> EquilibriumReport:
    """
    Iterate the joint operator to its fixed point

    The residual ||Q(p) - p||_2 / sqrt(d) is evaluated once per sweep for every
    schedule; the returned state is the first one whose residual is <= epsilon.

    Args:
        instance: Valid market instance
        params: Fee factor and scalings of the operator
        config: Solver settings

    Returns:
        EquilibriumReport; converged is False when max_iterations ran out
    """
    config = config or SolverConfig()
    index = instance.index
    rng = np.random.default_rng(config.seed)

    if config.initial_prices is not None:
        start = config.initial_prices
        start.check_aligned(index)
    else:
        start = initial_prices(instance, params, config.init, rng)

    nb = index.n_buyer_edges
    d = index.dimension
    state = start.as_array().copy()

    def sweep_of(x: np.ndarray) -> np.ndarray:
        return np.concatenate([quote_buyers(instance, x[nb:], params), quote_data(instance, x[:nb], params)])

    quoted = sweep_of(state)
    r = _normalized_norm(quoted - state)
    trace = [r]
    iterations = 0
    micro_steps = 0

    coordinates = None
    order = None
    if config.schedule is Schedule.ASYNC_RANDOM_FAIR:
        coordinates = _CoordinateOperator(index, params)
        order = fair_update_order(d, config.max_iterations * d, rng)

    while r > config.epsilon and iterations < config.max_iterations:
        if config.schedule is Schedule.SYNCHRONOUS:
            state = quoted
        elif config.schedule is Schedule.BLOCK_ALTERNATING:
            # Data block first, then buyers quoted from the fresh data prices
            data = quote_data(instance, state[:nb], params)
            buyer = quote_buyers(instance, data, params)
            state = np.concatenate([buyer, data])
        else:
            for _ in range(d):
                coordinates.update(state, next(order))
            micro_steps += d
        iterations += 1
        quoted = sweep_of(state)
        r = _normalized_norm(quoted - state)
        trace.append(r)

    converged = r <= config.epsilon
    prices = PriceVector.from_array(index, state)
    if converged:
        logger.debug(
            f"{instance.instance_id}: {config.schedule.value} converged in {iterations} iterations "
            f"(residual {r:.3e})"
        )
    else:
        logger.warning(
            f"{instance.instance_id}: {config.schedule.value} hit max_iterations={config.max_iterations} "
            f"with residual {r:.3e} > epsilon {config.epsilon:.1e}"
        )

    return EquilibriumReport(
        instance_id=instance.instance_id,
        prices=prices,
        iterations=iterations,
        residual_trace=trace,
        converged=converged,
        schedule=config.schedule,
        acceptance=acceptance_check(instance, prices, params.alpha_kd),
        inconsistency=market_inconsistency(instance, prices, params),
        params=params,
        micro_steps=micro_steps,
    )


def sweeps(instance: MarketInstance, start: PriceVector, rounds: int,
           params: QuotationParams = DEFAULT_PARAMS) -> List[PriceVector]:
    """States after 0, 1, ..., rounds synchronous applications of Q"""
    start.check_aligned(instance.index)
    states = [start]
    for _ in range(rounds):
        current = states[-1]
        states.append(PriceVector.from_arrays(
            instance.index,
            quote_buyers(instance, current.data_prices, params),
            quote_data(instance, current.buyer_prices, params),
        ))
    return states


def cobweb_trace(instance: MarketInstance, rounds: int,
                 params: QuotationParams = DEFAULT_PARAMS,
                 start: Optional[Tuple[float, float]] = None) -> List[Tuple[float, float]]:
    """
    Block-alternating staircase for a one-buyer, one-dataset market:
    (x, y) = (buyer price, data price); each round first moves y to Q_D(x)
    then x to Q_B(y). Returns 2 * rounds + 1 points starting from the start pair.
    """
    index = instance.index
    if index.n_buyer_edges != 1 or index.n_data_edges != 1:
        raise ConfigurationError(
            f"Cobweb trace needs exactly one buyer edge and one data edge, got "
            f"{index.n_buyer_edges} and {index.n_data_edges}"
        )
    if rounds < 0:
        raise ConfigurationError(f"rounds must be >= 0, got {rounds}")
    if start is None:
        init = initial_prices(instance, params, InitPolicy.CAPS)
        start = (float(init.buyer_prices[0]), float(init.data_prices[0]))
    x, y = float(start[0]), float(start[1])
    points = [(x, y)]
    for _ in range(rounds):
        y = float(quote_data(instance, np.array([x]), params)[0])
        points.append((x, y))
        x = float(quote_buyers(instance, np.array([y]), params)[0])
        points.append((x, y))
    return points
