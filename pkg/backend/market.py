"""
Market data model for the coupled data-model market
Static instance description, the joint edge-price state, validation and acceptance sets
"""

import math
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from backend.errors import StructuralError

logger = logging.getLogger(__name__)

# Column sums of the Shapley table must hit 1 this closely
SHAPLEY_SUM_TOLERANCE = 1e-12

BuyerEdgeKey = Tuple[str, str]  # (buyer_id, model_id)
DataEdgeKey = Tuple[str, str]   # (dataset_id, model_id)


@dataclass(frozen=True)
class DatasetSpec:
    """A dataset offered by one seller; kappa_d is the per-use offset"""
    id: str
    kappa_d: float


@dataclass(frozen=True)
class BuyerEdge:
    """A buyer of one model with its revenue weight and reserve price"""
    buyer_id: str
    omega: float
    reserve: float


@dataclass(frozen=True)
class ModelSpec:
    """A model producer: per-sale offset, margin, training datasets and buyers"""
    id: str
    kappa_m: float
    delta: float
    dataset_ids: Tuple[str, ...]
    buyers: Tuple[BuyerEdge, ...]

    @property
    def rho(self) -> float:
        # Derived on every access so it never drifts from the weights
        return float(sum(b.omega for b in self.buyers))

    @property
    def reserves(self) -> Tuple[float, ...]:
        return tuple(b.reserve for b in self.buyers)


@dataclass(frozen=True)
class ShapleyTable:
    """Per-model normalized contribution shares SV_{i|j}"""
    shares: Mapping[str, Mapping[str, float]]

    @property
    def model_ids(self) -> Tuple[str, ...]:
        return tuple(self.shares.keys())

    def column(self, model_id: str) -> Dict[str, float]:
        return dict(self.shares.get(model_id, {}))

    def share(self, model_id: str, dataset_id: str) -> float:
        return float(self.shares[model_id][dataset_id])

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {m: dict(col) for m, col in self.shares.items()}


@dataclass(frozen=True)
class EdgeIndex:
    """
    Array view of an instance: every quantity laid out along buyer edges,
    data edges or models, in a fixed canonical order
    """
    model_ids: Tuple[str, ...]
    buyer_keys: Tuple[BuyerEdgeKey, ...]
    data_keys: Tuple[DataEdgeKey, ...]
    buyer_model: np.ndarray
    data_model: np.ndarray
    omega: np.ndarray
    reserve: np.ndarray
    sv: np.ndarray
    kappa_d: np.ndarray
    cap: np.ndarray
    kappa_m: np.ndarray
    delta: np.ndarray
    rho: np.ndarray

    @property
    def n_models(self) -> int:
        return len(self.model_ids)

    @property
    def n_buyer_edges(self) -> int:
        return len(self.buyer_keys)

    @property
    def n_data_edges(self) -> int:
        return len(self.data_keys)

    @property
    def dimension(self) -> int:
        return self.n_buyer_edges + self.n_data_edges

    def per_model_sum(self, data_values: np.ndarray) -> np.ndarray:
        """Sum a data-edge vector within each model"""
        return np.bincount(self.data_model, weights=data_values, minlength=self.n_models)

    def per_model_revenue(self, buyer_prices: np.ndarray) -> np.ndarray:
        """W_j = sum_k omega_jk p_{B_k->M_j}"""
        return np.bincount(self.buyer_model, weights=self.omega * buyer_prices,
                           minlength=self.n_models)

    def model_min_reserve(self) -> np.ndarray:
        out = np.full(self.n_models, np.inf)
        np.minimum.at(out, self.buyer_model, self.reserve)
        return out

    def model_max_reserve(self) -> np.ndarray:
        out = np.full(self.n_models, -np.inf)
        np.maximum.at(out, self.buyer_model, self.reserve)
        return out


@dataclass(frozen=True)
class MarketInstance:
    """Full static description of sellers, producers, buyers, edges and caps"""
    datasets: Tuple[DatasetSpec, ...]
    models: Tuple[ModelSpec, ...]
    shapley: ShapleyTable
    caps: Mapping[DataEdgeKey, float] = field(default_factory=dict)
    instance_id: str = field(default="instance", compare=False)

    def dataset(self, dataset_id: str) -> DatasetSpec:
        for d in self.datasets:
            if d.id == dataset_id:
                return d
        raise KeyError(f"Dataset {dataset_id} not in instance")

    def model(self, model_id: str) -> ModelSpec:
        for m in self.models:
            if m.id == model_id:
                return m
        raise KeyError(f"Model {model_id} not in instance")

    @cached_property
    def index(self) -> EdgeIndex:
        kappa_by_dataset = {d.id: float(d.kappa_d) for d in self.datasets}
        buyer_keys: List[BuyerEdgeKey] = []
        data_keys: List[DataEdgeKey] = []
        buyer_model, data_model = [], []
        omega, reserve, sv, kappa_d, cap = [], [], [], [], []

        for j, m in enumerate(self.models):
            column = self.shapley.shares.get(m.id, {})
            for b in m.buyers:
                buyer_keys.append((b.buyer_id, m.id))
                buyer_model.append(j)
                omega.append(float(b.omega))
                reserve.append(float(b.reserve))
            for dataset_id in m.dataset_ids:
                if dataset_id not in kappa_by_dataset:
                    raise StructuralError(f"Model {m.id} references unknown dataset {dataset_id}")
                data_keys.append((dataset_id, m.id))
                data_model.append(j)
                sv.append(float(column.get(dataset_id, 0.0)))
                kappa_d.append(kappa_by_dataset[dataset_id])
                cap.append(float(self.caps.get((dataset_id, m.id), np.nan)))

        return EdgeIndex(
            model_ids=tuple(m.id for m in self.models),
            buyer_keys=tuple(buyer_keys),
            data_keys=tuple(data_keys),
            buyer_model=np.asarray(buyer_model, dtype=np.intp),
            data_model=np.asarray(data_model, dtype=np.intp),
            omega=np.asarray(omega, dtype=float),
            reserve=np.asarray(reserve, dtype=float),
            sv=np.asarray(sv, dtype=float),
            kappa_d=np.asarray(kappa_d, dtype=float),
            cap=np.asarray(cap, dtype=float),
            kappa_m=np.asarray([m.kappa_m for m in self.models], dtype=float),
            delta=np.asarray([m.delta for m in self.models], dtype=float),
            rho=np.asarray([m.rho for m in self.models], dtype=float),
        )

    @property
    def dimension(self) -> int:
        return self.index.dimension

    def with_scaled_reserves(self, factor: float) -> "MarketInstance":
        """Copy with every buyer reserve multiplied by factor"""
        models = tuple(
            replace(m, buyers=tuple(replace(b, reserve=b.reserve * factor) for b in m.buyers))
            for m in self.models
        )
        return replace(self, models=models)

    def with_offsets(self, kappa_d: Optional[Mapping[str, float]] = None,
                     kappa_m: Optional[Mapping[str, float]] = None) -> "MarketInstance":
        """Copy with selected dataset / model offsets replaced"""
        kappa_d = kappa_d or {}
        kappa_m = kappa_m or {}
        datasets = tuple(replace(d, kappa_d=kappa_d.get(d.id, d.kappa_d)) for d in self.datasets)
        models = tuple(replace(m, kappa_m=kappa_m.get(m.id, m.kappa_m)) for m in self.models)
        return replace(self, datasets=datasets, models=models)


@dataclass(frozen=True, eq=False)
class PriceVector:
    """Joint state p = [p_{B->M}; p_{D->M}] stored on edges"""
    buyer_keys: Tuple[BuyerEdgeKey, ...]
    data_keys: Tuple[DataEdgeKey, ...]
    buyer_prices: np.ndarray
    data_prices: np.ndarray

    def __post_init__(self):
        buyer = np.array(self.buyer_prices, dtype=float).reshape(-1)
        data = np.array(self.data_prices, dtype=float).reshape(-1)
        if buyer.shape[0] != len(self.buyer_keys) or data.shape[0] != len(self.data_keys):
            raise StructuralError(
                f"Price arrays ({buyer.shape[0]}, {data.shape[0]}) do not match "
                f"edge counts ({len(self.buyer_keys)}, {len(self.data_keys)})"
            )
        if not (np.all(np.isfinite(buyer)) and np.all(np.isfinite(data))):
            raise StructuralError("Prices must be finite")
        if np.any(buyer < 0) or np.any(data < 0):
            raise StructuralError("Prices must be nonnegative")
        buyer.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "buyer_keys", tuple(self.buyer_keys))
        object.__setattr__(self, "data_keys", tuple(self.data_keys))
        object.__setattr__(self, "buyer_prices", buyer)
        object.__setattr__(self, "data_prices", data)

    @classmethod
    def from_arrays(cls, index: EdgeIndex, buyer_prices: np.ndarray,
                    data_prices: np.ndarray) -> "PriceVector":
        return cls(index.buyer_keys, index.data_keys, buyer_prices, data_prices)

    @classmethod
    def from_array(cls, index: EdgeIndex, values: np.ndarray) -> "PriceVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (index.dimension,):
            raise StructuralError(f"Expected vector of length {index.dimension}, got {values.shape}")
        nb = index.n_buyer_edges
        return cls.from_arrays(index, values[:nb], values[nb:])

    @classmethod
    def zeros(cls, index: EdgeIndex) -> "PriceVector":
        return cls.from_arrays(index, np.zeros(index.n_buyer_edges), np.zeros(index.n_data_edges))

    @property
    def dimension(self) -> int:
        return len(self.buyer_keys) + len(self.data_keys)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.buyer_prices, self.data_prices])

    def scaled(self, factor: float) -> "PriceVector":
        return PriceVector(self.buyer_keys, self.data_keys,
                           self.buyer_prices * factor, self.data_prices * factor)

    def check_aligned(self, index: EdgeIndex) -> None:
        """Raise StructuralError unless this vector is indexed like the instance"""
        if self.buyer_keys != index.buyer_keys or self.data_keys != index.data_keys:
            raise StructuralError("Price vector edges do not match the instance's edges")

    def buyer_price(self, buyer_id: str, model_id: str) -> float:
        return float(self.buyer_prices[self.buyer_keys.index((buyer_id, model_id))])

    def data_price(self, dataset_id: str, model_id: str) -> float:
        return float(self.data_prices[self.data_keys.index((dataset_id, model_id))])

    def max_abs_diff(self, other: "PriceVector") -> float:
        if self.buyer_keys != other.buyer_keys or self.data_keys != other.data_keys:
            raise StructuralError("Cannot compare price vectors over different edges")
        if self.dimension == 0:
            return 0.0
        return float(np.max(np.abs(self.as_array() - other.as_array())))

    def to_dict(self) -> Dict[str, List[Dict[str, Any]]]:
        """Convert to dictionary for serialization"""
        return {
            "buyer_prices": [
                {"buyer": b, "model": m, "price": float(p)}
                for (b, m), p in zip(self.buyer_keys, self.buyer_prices)
            ],
            "data_prices": [
                {"dataset": d, "model": m, "price": float(p)}
                for (d, m), p in zip(self.data_keys, self.data_prices)
            ],
        }


@dataclass(frozen=True)
class Violation:
    """One broken invariant: where, which rule, and the offending value"""
    field: str
    invariant: str
    value: Any

    def __str__(self) -> str:
        return f"{self.field}: {self.invariant} (got {self.value!r})"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, field_name: str, invariant: str, value: Any) -> None:
        self.violations.append(Violation(field_name, invariant, value))

    def messages(self) -> List[str]:
        return [str(v) for v in self.violations]

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "violations": [
                {"field": v.field, "invariant": v.invariant, "value": repr(v.value)}
                for v in self.violations
            ],
        }


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool) \
        and math.isfinite(float(value))


def validate(instance: MarketInstance) -> ValidationReport:
    """
    Check every standing condition of the market

    Args:
        instance: Market instance to check

    Returns:
        ValidationReport; violations are data, never raised
    """
    report = ValidationReport()

    seen_datasets = set()
    for i, d in enumerate(instance.datasets):
        path = f"datasets[{i}]"
        if d.id in seen_datasets:
            report.add(f"{path}.id", "dataset ids must be unique", d.id)
        seen_datasets.add(d.id)
        if not _is_number(d.kappa_d) or d.kappa_d <= 0:
            report.add(f"{path}.kappa_d", "κ_D must be strictly positive", d.kappa_d)

    known_datasets = {d.id for d in instance.datasets}
    seen_models = set()
    for j, m in enumerate(instance.models):
        path = f"models[{j}]"
        if m.id in seen_models:
            report.add(f"{path}.id", "model ids must be unique", m.id)
        seen_models.add(m.id)

        if not _is_number(m.kappa_m) or m.kappa_m <= 0:
            report.add(f"{path}.kappa_m", "κ_M must be strictly positive", m.kappa_m)
        if not _is_number(m.delta) or m.delta < 0:
            report.add(f"{path}.delta", "δ must be nonnegative", m.delta)

        if len(m.dataset_ids) == 0:
            report.add(f"{path}.datasets", "model must reference at least one dataset", m.dataset_ids)
        if len(set(m.dataset_ids)) != len(m.dataset_ids):
            report.add(f"{path}.datasets", "dataset ids within a model must be unique", m.dataset_ids)
        for dataset_id in m.dataset_ids:
            if dataset_id not in known_datasets:
                report.add(f"{path}.datasets", "dataset id must exist", dataset_id)

        if len(m.buyers) == 0:
            report.add(f"{path}.buyers", "model must have at least one buyer edge", m.buyers)
        buyer_ids = [b.buyer_id for b in m.buyers]
        if len(set(buyer_ids)) != len(buyer_ids):
            report.add(f"{path}.buyers", "buyer ids within a model must be unique", buyer_ids)
        weights_ok = True
        for k, b in enumerate(m.buyers):
            if not _is_number(b.omega) or b.omega < 0:
                report.add(f"{path}.buyers[{k}].omega", "ω must be nonnegative", b.omega)
                weights_ok = False
            if not _is_number(b.reserve) or b.reserve <= 0:
                report.add(f"{path}.buyers[{k}].reserve", "reserve must be strictly positive", b.reserve)
        if weights_ok and not (0 <= m.rho < 1):
            report.add(f"{path}.rho", "ρ_j must lie in [0,1)", m.rho)

        _check_shapley_column(instance, m, path, report)

    for model_id in instance.shapley.model_ids:
        if model_id not in seen_models:
            report.add(f"shapley[{model_id}]", "Shapley column must belong to a model", model_id)

    models_by_id = {m.id: m for m in instance.models}
    for (dataset_id, model_id), cap in instance.caps.items():
        path = f"caps[{dataset_id},{model_id}]"
        model = models_by_id.get(model_id)
        if model is None or dataset_id not in model.dataset_ids:
            report.add(path, "cap must sit on an existing dataset-model edge", (dataset_id, model_id))
        if not _is_number(cap) or cap < 0:
            report.add(path, "cap must be finite and nonnegative", cap)

    if not report.passed:
        logger.debug(f"Instance {instance.instance_id} failed validation: {report.messages()}")
    return report


def _check_shapley_column(instance: MarketInstance, model: ModelSpec, path: str,
                          report: ValidationReport) -> None:
    if model.id not in instance.shapley.shares:
        report.add(f"shapley[{model.id}]", "every model needs a Shapley column", None)
        return
    column = instance.shapley.shares[model.id]
    if set(column.keys()) != set(model.dataset_ids):
        report.add(f"shapley[{model.id}]", "Shapley column must cover exactly the model's datasets",
                   sorted(column.keys()))
    values_ok = True
    for dataset_id, value in column.items():
        if not _is_number(value) or value < 0:
            report.add(f"shapley[{model.id}][{dataset_id}]", "SV_{i|j} must be nonnegative", value)
            values_ok = False
    if values_ok:
        total = float(sum(column.values()))
        if abs(total - 1.0) > SHAPLEY_SUM_TOLERANCE:
            report.add(f"shapley[{model.id}]", "Σ_i SV_{i|j} must equal 1", total)


@dataclass(frozen=True, eq=False)
class AcceptanceReport:
    """Per-edge acceptance on both sides plus pooled success rate"""
    buyer_keys: Tuple[BuyerEdgeKey, ...]
    data_keys: Tuple[DataEdgeKey, ...]
    buyer_accepted: np.ndarray
    data_accepted: np.ndarray

    @property
    def buyer_success_rate(self) -> float:
        return float(np.mean(self.buyer_accepted)) if self.buyer_accepted.size else 1.0

    @property
    def data_success_rate(self) -> float:
        return float(np.mean(self.data_accepted)) if self.data_accepted.size else 1.0

    @property
    def success_rate(self) -> float:
        # Buyer and data edges are pooled with equal weight per edge
        total = self.buyer_accepted.size + self.data_accepted.size
        if total == 0:
            return 1.0
        return float((np.sum(self.buyer_accepted) + np.sum(self.data_accepted)) / total)

    @property
    def buyer_feasible(self) -> bool:
        return bool(np.all(self.buyer_accepted))

    @property
    def triple_win(self) -> bool:
        return bool(np.all(self.buyer_accepted) and np.all(self.data_accepted))

    def rejected_buyer_edges(self) -> List[BuyerEdgeKey]:
        return [k for k, ok in zip(self.buyer_keys, self.buyer_accepted) if not ok]

    def to_dict(self) -> Dict:
        return {
            "success_rate": self.success_rate,
            "buyer_success_rate": self.buyer_success_rate,
            "data_success_rate": self.data_success_rate,
            "triple_win": self.triple_win,
            "rejected_buyer_edges": [list(k) for k in self.rejected_buyer_edges()],
            "rejected_data_edges": [
                list(k) for k, ok in zip(self.data_keys, self.data_accepted) if not ok
            ],
        }


def acceptance_check(instance: MarketInstance, prices: PriceVector,
                     kappa_d_scale: float = 1.0) -> AcceptanceReport:
    """
    Evaluate the acceptance sets A_B (p_B <= R) and A_D (p_D >= κ_D)

    Args:
        instance: Market instance
        prices: Price vector indexed like the instance
        kappa_d_scale: Global scaling applied to the dataset floors

    Returns:
        AcceptanceReport
    """
    index = instance.index
    prices.check_aligned(index)
    buyer_ok = prices.buyer_prices <= index.reserve
    data_ok = prices.data_prices >= kappa_d_scale * index.kappa_d
    return AcceptanceReport(index.buyer_keys, index.data_keys, buyer_ok, data_ok)
