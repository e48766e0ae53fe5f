"""
Feasibility analysis in scaling space
Analytic envelopes, the global feasibility condition, numerical frontiers by
bisection on solved fixed points, offset comparative statics and the maximal platform fee
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from backend.errors import ConfigurationError
from backend.market import BuyerEdgeKey, MarketInstance, PriceVector
from backend.quotation import DEFAULT_PARAMS, QuotationParams
from backend.solver import SolverConfig, closed_form_equilibrium, solve

logger = logging.getLogger(__name__)

BISECTION_TOLERANCE = 1e-6
BRACKET_MULTIPLIER = 10.0
MAX_BRACKET_DOUBLINGS = 60
FEE_GRID_STEP = 1e-7
FEE_TIGHTNESS_TOLERANCE = 1e-8
FEE_PROBE_STEP = 1e-6


class Axis(Enum):
    """Global scaling parameters of the quotation operator"""
    ALPHA_KD = "alpha_kd"
    ALPHA_KM = "alpha_km"
    ALPHA_DELTA = "alpha_delta"

    @property
    def minimum(self) -> float:
        # Offset scalings must stay strictly positive; the margin scaling may be 0
        return 0.0 if self is Axis.ALPHA_DELTA else BISECTION_TOLERANCE


class PointStatus(Enum):
    FEASIBLE = "feasible"
    EMPTY = "empty"
    UNRESOLVED = "unresolved"
    NOT_RUN = "not_run"


@dataclass(frozen=True)
class MarketAggregates:
    """Per-buyer-edge view of the quantities entering the envelope formulas"""
    buyer_keys: Tuple[BuyerEdgeKey, ...]
    reserve: np.ndarray      # R_{B_k->M_j}
    kappa_m: np.ndarray      # kappa_M^(0) of the edge's model
    delta: np.ndarray        # delta^(0)
    spend: np.ndarray        # S_j = sum of kappa_D^(0) over the model's datasets
    rho: np.ndarray
    max_reserve: np.ndarray  # R_bar_j
    min_reserve: np.ndarray  # R_j^min

    @classmethod
    def of(cls, instance: MarketInstance) -> "MarketAggregates":
        index = instance.index
        j = index.buyer_model
        return cls(
            buyer_keys=index.buyer_keys,
            reserve=index.reserve,
            kappa_m=index.kappa_m[j],
            delta=index.delta[j],
            spend=index.per_model_sum(index.kappa_d)[j],
            rho=index.rho[j],
            max_reserve=index.model_max_reserve()[j],
            min_reserve=index.model_min_reserve()[j],
        )

    def slack(self, alpha_kd: float, alpha_km: float, alpha_delta: float) -> np.ndarray:
        """R - alpha_km kappa_M - rho R_bar - (1 + alpha_delta delta) alpha_kd S per buyer edge"""
        return (self.reserve - alpha_km * self.kappa_m - self.rho * self.max_reserve
                - (1.0 + alpha_delta * self.delta) * alpha_kd * self.spend)


@dataclass(frozen=True)
class AxisBound:
    """Largest analytic value of one scaling with the other two fixed"""
    value: float
    status: PointStatus
    binding_model: Optional[str] = None
    binding_buyer: Optional[str] = None


def analytic_axis_max(instance: MarketInstance, target: Axis,
                      scalings: Mapping[Axis, float]) -> AxisBound:
    """
    Envelope value of the target scaling given the other two, minimized over buyer edges.
    Edges whose condition cannot hold for any admissible target value make the point EMPTY.
    """
    agg = MarketAggregates.of(instance)
    a_kd = scalings.get(Axis.ALPHA_KD, 1.0)
    a_km = scalings.get(Axis.ALPHA_KM, 1.0)
    a_delta = scalings.get(Axis.ALPHA_DELTA, 1.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        if target is Axis.ALPHA_DELTA:
            room = agg.reserve - a_km * agg.kappa_m - agg.rho * agg.max_reserve
            no_margin = agg.delta == 0
            values = np.where(no_margin, np.inf, (room / (a_kd * agg.spend) - 1.0) / agg.delta)
            # Edges of margin-free models do not restrict alpha_delta but must hold on their own
            broken = (room <= 0) | (no_margin & (a_kd * agg.spend > room)) | (~no_margin & (values < 0))
        elif target is Axis.ALPHA_KM:
            values = (agg.reserve - (1.0 + a_delta * agg.delta) * a_kd * agg.spend
                      - agg.rho * agg.max_reserve) / agg.kappa_m
            broken = values <= 0
        else:
            values = (agg.reserve - a_km * agg.kappa_m - agg.rho * agg.max_reserve) \
                / ((1.0 + a_delta * agg.delta) * agg.spend)
            broken = values <= 0

    if values.size == 0:
        return AxisBound(math.inf, PointStatus.FEASIBLE)
    k = int(np.argmax(broken)) if np.any(broken) else int(np.argmin(values))
    buyer_id, model_id = agg.buyer_keys[k]
    if np.any(broken):
        return AxisBound(0.0, PointStatus.EMPTY, model_id, buyer_id)
    return AxisBound(float(values[k]), PointStatus.FEASIBLE, model_id, buyer_id)


@dataclass
class EnvelopePoint:
    x: float
    analytic: float
    status: PointStatus
    binding_model: Optional[str] = None
    binding_buyer: Optional[str] = None
    numeric: float = math.nan
    numeric_status: PointStatus = PointStatus.NOT_RUN


@dataclass
class FeasibilityEnvelope:
    """Frontier of y_axis as a function of x_axis with the third scaling held fixed"""
    x_axis: Axis
    y_axis: Axis
    fixed: Dict[Axis, float]
    points: List[EnvelopePoint] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Rows in the documented envelope CSV layout"""
        return pd.DataFrame(
            [
                {
                    "axis1": p.x,
                    "axis2_analytic_max": p.analytic,
                    "axis2_numeric_max": p.numeric,
                    "binding_model": p.binding_model,
                    "binding_buyer": p.binding_buyer,
                }
                for p in self.points
            ],
            columns=["axis1", "axis2_analytic_max", "axis2_numeric_max", "binding_model", "binding_buyer"],
        )


def _third_axis(x_axis: Axis, y_axis: Axis) -> Axis:
    if x_axis is y_axis:
        raise ConfigurationError(f"Envelope axes must differ, got {x_axis.value} twice")
    return next(a for a in Axis if a not in (x_axis, y_axis))


def analytic_envelope(instance: MarketInstance, x_axis: Axis, y_axis: Axis,
                      grid: Sequence[float], fixed_value: float = 1.0) -> FeasibilityEnvelope:
    """Sample the analytic envelope y_max(x) on a grid"""
    third = _third_axis(x_axis, y_axis)
    envelope = FeasibilityEnvelope(x_axis, y_axis, {third: fixed_value})
    for x in grid:
        if x < x_axis.minimum or (x_axis is not Axis.ALPHA_DELTA and x <= 0):
            raise ConfigurationError(f"{x_axis.value} grid value {x} is out of range")
        bound = analytic_axis_max(instance, y_axis, {x_axis: x, third: fixed_value})
        envelope.points.append(EnvelopePoint(
            x=float(x),
            analytic=bound.value,
            status=bound.status,
            binding_model=bound.binding_model,
            binding_buyer=bound.binding_buyer,
        ))
    return envelope


def envelope_alpha_delta_vs_alphaD(instance: MarketInstance, alpha_km: float,
                                   alpha_kd_grid: Sequence[float]) -> FeasibilityEnvelope:
    """alpha_delta_max as a function of alpha_kd at fixed alpha_km"""
    return analytic_envelope(instance, Axis.ALPHA_KD, Axis.ALPHA_DELTA, alpha_kd_grid, alpha_km)


def envelope_alpha_delta_vs_alphaM(instance: MarketInstance, alpha_kd: float,
                                   alpha_km_grid: Sequence[float]) -> FeasibilityEnvelope:
    """alpha_delta_max as a function of alpha_km at fixed alpha_kd"""
    return analytic_envelope(instance, Axis.ALPHA_KM, Axis.ALPHA_DELTA, alpha_km_grid, alpha_kd)


def envelope_kM_vs_kD(instance: MarketInstance, alpha_delta: float,
                      alpha_kd_grid: Sequence[float]) -> FeasibilityEnvelope:
    """alpha_km_max as a function of alpha_kd at fixed alpha_delta"""
    return analytic_envelope(instance, Axis.ALPHA_KD, Axis.ALPHA_KM, alpha_kd_grid, alpha_delta)


def envelope_kD_vs_kM(instance: MarketInstance, alpha_delta: float,
                      alpha_km_grid: Sequence[float]) -> FeasibilityEnvelope:
    """alpha_kd_max as a function of alpha_km at fixed alpha_delta"""
    return analytic_envelope(instance, Axis.ALPHA_KM, Axis.ALPHA_KD, alpha_km_grid, alpha_delta)


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    min_slack: float
    binding_model: Optional[str] = None
    binding_buyer: Optional[str] = None

    def __bool__(self) -> bool:
        return self.feasible


def global_feasibility(instance: MarketInstance, alpha_kd: float = 1.0, alpha_km: float = 1.0,
                       alpha_delta: float = 1.0) -> FeasibilityVerdict:
    """
    (1 + alpha_delta delta) alpha_kd S_j <= R_{B_k->M_j} - alpha_km kappa_M - rho_j R_bar_j
    for every buyer edge; sufficient for the fixed point to clear every reserve
    """
    QuotationParams(alpha_kd=alpha_kd, alpha_km=alpha_km, alpha_delta=alpha_delta)
    agg = MarketAggregates.of(instance)
    slack = agg.slack(alpha_kd, alpha_km, alpha_delta)
    if slack.size == 0:
        return FeasibilityVerdict(True, math.inf)
    k = int(np.argmin(slack))
    buyer_id, model_id = agg.buyer_keys[k]
    return FeasibilityVerdict(bool(np.all(slack >= 0)), float(slack[k]), model_id, buyer_id)


def _params_for(scalings: Mapping[Axis, float]) -> QuotationParams:
    return QuotationParams(**{axis.value: value for axis, value in scalings.items()})


def buyer_feasible_at(instance: MarketInstance, params: QuotationParams,
                      config: Optional[SolverConfig] = None) -> bool:
    """Solve at params and check the buyer side of the acceptance sets"""
    report = solve(instance, params, config)
    if not report.converged:
        logger.warning(f"{instance.instance_id}: no convergence at {params}; treating as infeasible")
        return False
    return report.acceptance.buyer_feasible


def _bisect_largest(feasible: Callable[[float], bool], lower: float, start_upper: float,
                    tolerance: float) -> Tuple[float, PointStatus]:
    """Largest value where feasible() holds, assuming feasibility is downward closed"""
    if not feasible(lower):
        return 0.0, PointStatus.EMPTY
    lo, hi = lower, start_upper
    doublings = 0
    while feasible(hi):
        lo = hi
        hi *= 2.0
        doublings += 1
        if doublings > MAX_BRACKET_DOUBLINGS:
            return lo, PointStatus.UNRESOLVED
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo, PointStatus.FEASIBLE


def numerical_frontier(instance: MarketInstance, x_axis: Axis, y_axis: Axis,
                       grid: Sequence[float], fixed_value: float = 1.0,
                       config: Optional[SolverConfig] = None,
                       tolerance: float = BISECTION_TOLERANCE) -> FeasibilityEnvelope:
    """
    For each grid point, bisect y to the largest value whose solved fixed point
    clears every buyer reserve, next to the analytic envelope value
    """
    envelope = analytic_envelope(instance, x_axis, y_axis, grid, fixed_value)
    third = _third_axis(x_axis, y_axis)

    for point in envelope.points:
        def feasible(y: float, x: float = point.x) -> bool:
            return buyer_feasible_at(
                instance, _params_for({x_axis: x, y_axis: y, third: fixed_value}), config
            )

        upper = BRACKET_MULTIPLIER * point.analytic \
            if point.status is PointStatus.FEASIBLE and 0 < point.analytic < math.inf else 1.0
        value, status = _bisect_largest(feasible, y_axis.minimum, upper, tolerance)
        point.numeric = value
        point.numeric_status = status
        if status is PointStatus.UNRESOLVED:
            logger.warning(
                f"{instance.instance_id}: frontier of {y_axis.value} at {x_axis.value}={point.x} "
                f"still feasible after {MAX_BRACKET_DOUBLINGS} bracket doublings"
            )
    return envelope


@dataclass
class MonotonicityReport:
    """Comparison of equilibria before and after raising offsets"""
    passed: bool
    base: PriceVector
    raised: PriceVector
    weak_violations: List[Tuple[str, Tuple[str, str]]] = field(default_factory=list)
    strict_failures: List[Tuple[str, Tuple[str, str]]] = field(default_factory=list)


def _affected_edges(instance: MarketInstance, kappa_d_increments: Mapping[str, float],
                    kappa_m_increments: Mapping[str, float]) -> Tuple[set, set]:
    index = instance.index
    raised_datasets = {d for d, inc in kappa_d_increments.items() if inc > 0}
    raised_models = {m for m, inc in kappa_m_increments.items() if inc > 0}
    data_edges = {key for key in index.data_keys if key[0] in raised_datasets}
    # Buyers of a model pay for its offset and for any raised dataset it trains on
    models_hit = raised_models | {m for _, m in data_edges}
    buyer_edges = {key for key in index.buyer_keys if key[1] in models_hit}
    return buyer_edges, data_edges


def offset_monotonicity_check(instance: MarketInstance,
                              kappa_d_increments: Optional[Mapping[str, float]] = None,
                              kappa_m_increments: Optional[Mapping[str, float]] = None,
                              params: QuotationParams = DEFAULT_PARAMS,
                              config: Optional[SolverConfig] = None,
                              weak_tolerance: float = 1e-9,
                              strict_margin: float = 1e-12) -> MonotonicityReport:
    """
    Solve before and after raising offsets; every price must weakly rise and
    prices tied to a strictly raised offset must strictly rise
    """
    kappa_d_increments = dict(kappa_d_increments or {})
    kappa_m_increments = dict(kappa_m_increments or {})
    for name, inc in list(kappa_d_increments.items()) + list(kappa_m_increments.items()):
        if not inc >= 0:
            raise ConfigurationError(f"Offset increment for {name} must be nonnegative, got {inc}")

    config = config or SolverConfig(epsilon=1e-12)
    raised_instance = instance.with_offsets(
        kappa_d={d.id: d.kappa_d + kappa_d_increments.get(d.id, 0.0) for d in instance.datasets},
        kappa_m={m.id: m.kappa_m + kappa_m_increments.get(m.id, 0.0) for m in instance.models},
    )
    base = solve(instance, params, config).prices
    raised = solve(raised_instance, params, config).prices

    buyer_hit, data_hit = _affected_edges(instance, kappa_d_increments, kappa_m_increments)
    weak, strict = [], []
    for side, keys, before, after, hit in (
        ("buyer", base.buyer_keys, base.buyer_prices, raised.buyer_prices, buyer_hit),
        ("data", base.data_keys, base.data_prices, raised.data_prices, data_hit),
    ):
        for key, p0, p1 in zip(keys, before, after):
            if p1 < p0 - weak_tolerance:
                weak.append((side, key))
            if key in hit and not p1 > p0 + strict_margin:
                strict.append((side, key))

    passed = not weak and not strict
    if not passed:
        logger.warning(
            f"{instance.instance_id}: offset monotonicity failed "
            f"({len(weak)} decreases, {len(strict)} missing strict increases)"
        )
    return MonotonicityReport(passed, base, raised, weak, strict)


@dataclass(frozen=True)
class FeeReport:
    alpha_star: float
    tau_star: float
    binding_model: str
    per_model_alpha: Dict[str, float]

    @property
    def clamped(self) -> bool:
        """True when even a zero fee cannot clear every reserve"""
        return self.alpha_star < 1.0

    def to_dict(self) -> Dict:
        return {
            "alpha_star": self.alpha_star,
            "tau_star": self.tau_star,
            "binding_model": self.binding_model,
            "per_model_alpha": dict(self.per_model_alpha),
        }


def fee_price_slope(instance: MarketInstance, params: QuotationParams = DEFAULT_PARAMS) -> Dict[str, float]:
    """d p_{M_j} / d alpha = (kappa_M + (1+delta) S_j) / (1 - rho_j) for each model"""
    unit = QuotationParams(1.0, params.alpha_kd, params.alpha_km, params.alpha_delta)
    prices = closed_form_equilibrium(instance, unit)
    index = instance.index
    first_buyer = {int(j): k for k, j in reversed(list(enumerate(index.buyer_model)))}
    return {
        model_id: float(prices.buyer_prices[first_buyer[j]])
        for j, model_id in enumerate(index.model_ids)
    }


def max_uniform_fee(instance: MarketInstance) -> FeeReport:
    """
    Largest uniform fee keeping every buyer inside its reserve:
    alpha* = min_j (1 - rho_j) R_j^min / (kappa_M + (1+delta) S_j), tau* = max(0, 1 - 1/alpha*)
    """
    index = instance.index
    slope = fee_price_slope(instance)
    min_reserve = index.model_min_reserve()
    per_model = {
        model_id: float(min_reserve[j] / slope[model_id])
        for j, model_id in enumerate(index.model_ids)
    }
    binding = min(per_model, key=per_model.get)
    alpha_star = per_model[binding]
    tau_star = max(0.0, 1.0 - 1.0 / alpha_star)
    if alpha_star < 1:
        logger.info(f"{instance.instance_id}: alpha*={alpha_star:.6f} < 1, fee clamps at 0")
    return FeeReport(alpha_star, tau_star, binding, per_model)


@dataclass(frozen=True)
class ModelTightness:
    model_id: str
    price: float
    min_reserve: float

    @property
    def slack(self) -> float:
        return self.min_reserve - self.price


def fee_tightness(instance: MarketInstance, alpha: float) -> List[ModelTightness]:
    """Equilibrium model price at fee factor alpha against each model's smallest reserve"""
    slope = fee_price_slope(instance)
    min_reserve = instance.index.model_min_reserve()
    return [
        ModelTightness(model_id, alpha * slope[model_id], float(min_reserve[j]))
        for j, model_id in enumerate(instance.index.model_ids)
    ]


@dataclass(frozen=True)
class FeeVerification:
    tau_star: float
    binding_model: str
    binding_price: float
    binding_min_reserve: float
    infeasible_above: bool
    clamped: bool

    @property
    def gap(self) -> float:
        return abs(self.binding_price - self.binding_min_reserve)

    @property
    def passed(self) -> bool:
        if self.clamped:
            return self.infeasible_above
        return self.gap <= FEE_TIGHTNESS_TOLERANCE and self.infeasible_above


def verify_max_fee(instance: MarketInstance, report: Optional[FeeReport] = None,
                   config: Optional[SolverConfig] = None) -> FeeVerification:
    """
    Solve at tau* and check the binding model prices at its smallest reserve,
    then check tau* + 1e-6 leaves some buyer priced out
    """
    report = report or max_uniform_fee(instance)
    config = config or SolverConfig(epsilon=1e-12)
    at_star = solve(instance, QuotationParams.from_fee(report.tau_star), config)
    index = instance.index
    j = index.model_ids.index(report.binding_model)
    price = float(at_star.prices.buyer_prices[np.flatnonzero(index.buyer_model == j)[0]])
    above = solve(instance, QuotationParams.from_fee(report.tau_star + FEE_PROBE_STEP), config)
    return FeeVerification(
        tau_star=report.tau_star,
        binding_model=report.binding_model,
        binding_price=price,
        binding_min_reserve=float(index.model_min_reserve()[j]),
        infeasible_above=not above.acceptance.buyer_feasible,
        clamped=report.clamped,
    )


def bisect_max_fee(instance: MarketInstance, step: float = FEE_GRID_STEP,
                   config: Optional[SolverConfig] = None) -> float:
    """Largest tau on the grid {0, step, 2 step, ...} below 1 whose solved prices clear every reserve"""
    n_cells = int(round(1.0 / step))

    def feasible(k: int) -> bool:
        return buyer_feasible_at(instance, QuotationParams.from_fee(k * step), config)

    if not feasible(0):
        return 0.0
    lo, hi = 0, n_cells
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo * step
