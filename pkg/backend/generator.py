"""
Seeded synthetic market generator with the default simulation ranges
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from backend.errors import ConfigurationError
from backend.market import BuyerEdge, DatasetSpec, MarketInstance, ModelSpec, ShapleyTable
from backend.shapley import normalize_shares, shapley_values, submodular_utility

logger = logging.getLogger(__name__)

Range = Tuple[float, float]

SHAPLEY_MODES = ("dirichlet", "submodular")


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Market shape and sampling laws.
    The random stream never depends on rho: weights are drawn raw and only
    rescaled to rho, so a rho sweep compares the same markets.
    """
    n_datasets: int = 7
    n_models: int = 7
    buyers_per_model: Tuple[int, int] = (1, 5)
    datasets_per_model: Optional[Tuple[int, int]] = None  # None: every model uses every dataset
    kappa_d_range: Range = (0.10, 0.40)
    kappa_m_range: Range = (1.0, 5.0)
    delta: float = 0.10
    reserve_range: Range = (25.0, 100.0)
    cap_range: Range = (1.5, 4.0)
    rho: float = 0.6
    shapley_mode: str = "dirichlet"

    def __post_init__(self):
        if self.n_datasets < 1 or self.n_models < 1:
            raise ConfigurationError("Need at least one dataset and one model")
        lo, hi = self.buyers_per_model
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"buyers_per_model must satisfy 1 <= lo <= hi, got {self.buyers_per_model}")
        if self.datasets_per_model is not None:
            lo, hi = self.datasets_per_model
            if not 1 <= lo <= hi <= self.n_datasets:
                raise ConfigurationError(
                    f"datasets_per_model must lie within [1, {self.n_datasets}], got {self.datasets_per_model}"
                )
        for name in ("kappa_d_range", "kappa_m_range", "reserve_range", "cap_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigurationError(f"{name} must be a positive interval, got {(lo, hi)}")
        if self.delta < 0:
            raise ConfigurationError(f"delta must be nonnegative, got {self.delta}")
        if not 0 <= self.rho < 1:
            raise ConfigurationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.shapley_mode not in SHAPLEY_MODES:
            raise ConfigurationError(f"shapley_mode must be one of {SHAPLEY_MODES}, got {self.shapley_mode!r}")


def generate(config: GeneratorConfig, seed: int) -> MarketInstance:
    """
    Draw one market

    Args:
        config: Shape and sampling laws
        seed: RNG seed; identical (config, seed) give identical instances

    Returns:
        MarketInstance with caps on every data edge
    """
    rng = np.random.default_rng(seed)
    dataset_ids = [f"D{i + 1}" for i in range(config.n_datasets)]
    kappa_d = rng.uniform(*config.kappa_d_range, size=config.n_datasets)
    datasets = tuple(DatasetSpec(d, float(k)) for d, k in zip(dataset_ids, kappa_d))

    models, shares, caps = [], {}, {}
    buyer_counter = 0
    for j in range(config.n_models):
        model_id = f"M{j + 1}"
        kappa_m = float(rng.uniform(*config.kappa_m_range))
        n_buyers = int(rng.integers(config.buyers_per_model[0], config.buyers_per_model[1] + 1))

        if config.datasets_per_model is None:
            used = list(dataset_ids)
        else:
            n_used = int(rng.integers(config.datasets_per_model[0], config.datasets_per_model[1] + 1))
            picks = np.sort(rng.choice(config.n_datasets, size=n_used, replace=False))
            used = [dataset_ids[i] for i in picks]

        reserves = rng.uniform(*config.reserve_range, size=n_buyers)
        raw_weights = rng.uniform(0.0, 1.0, size=n_buyers) + 1e-3
        weights = raw_weights / raw_weights.sum() * config.rho

        buyers = []
        for w, r in zip(weights, reserves):
            buyer_counter += 1
            buyers.append(BuyerEdge(f"B{buyer_counter}", float(w), float(r)))

        if config.shapley_mode == "dirichlet":
            column = dict(zip(used, rng.dirichlet(np.ones(len(used)))))
        else:
            column = shapley_values(submodular_utility(used, rng))
        shares[model_id] = normalize_shares(column, model_id)

        for d, c in zip(used, rng.uniform(*config.cap_range, size=len(used))):
            caps[(d, model_id)] = float(c)

        models.append(ModelSpec(
            id=model_id,
            kappa_m=kappa_m,
            delta=float(config.delta),
            dataset_ids=tuple(used),
            buyers=tuple(buyers),
        ))

    instance = MarketInstance(
        datasets=datasets,
        models=tuple(models),
        shapley=ShapleyTable(shares),
        caps=caps,
        instance_id=f"seed{seed}-rho{config.rho:g}",
    )
    logger.debug(f"Generated {instance.instance_id}: d={instance.dimension}")
    return instance
