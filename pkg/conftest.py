"""
Shared fixtures: the two hand-checkable markets and small instance builders
"""

import sys
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import pytest

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from backend.generator import GeneratorConfig, generate
from backend.market import BuyerEdge, DatasetSpec, MarketInstance, ModelSpec, ShapleyTable


def single_model_instance(kappa_d: Sequence[float], sv: Sequence[float],
                          buyers: Sequence[Tuple[float, float]], kappa_m: float, delta: float,
                          caps: Optional[Sequence[float]] = None,
                          instance_id: str = "test") -> MarketInstance:
    """One model M1 over datasets D1..Dn with buyers B1..Bk given as (omega, reserve)"""
    dataset_ids = tuple(f"D{i + 1}" for i in range(len(kappa_d)))
    cap_map: Dict[Tuple[str, str], float] = {}
    if caps is not None:
        cap_map = {(d, "M1"): c for d, c in zip(dataset_ids, caps)}
    return MarketInstance(
        datasets=tuple(DatasetSpec(d, k) for d, k in zip(dataset_ids, kappa_d)),
        models=(ModelSpec(
            id="M1",
            kappa_m=kappa_m,
            delta=delta,
            dataset_ids=dataset_ids,
            buyers=tuple(BuyerEdge(f"B{k + 1}", w, r) for k, (w, r) in enumerate(buyers)),
        ),),
        shapley=ShapleyTable({"M1": dict(zip(dataset_ids, sv))}),
        caps=cap_map,
        instance_id=instance_id,
    )


@pytest.fixture(scope="session")
def e1() -> MarketInstance:
    """kappa_D 0.2, SV 1, one buyer (omega 0.6, R 100), kappa_M 2, delta 0.1, cap 3"""
    return single_model_instance([0.2], [1.0], [(0.6, 100.0)], kappa_m=2.0, delta=0.1,
                                 caps=[3.0], instance_id="E1")


@pytest.fixture(scope="session")
def e2() -> MarketInstance:
    """kappa_D (0.1, 0.3), SV (0.4, 0.6), buyers omega (0.3, 0.3) R (100, 100), kappa_M 1, delta 0"""
    return single_model_instance([0.1, 0.3], [0.4, 0.6], [(0.3, 100.0), (0.3, 100.0)],
                                 kappa_m=1.0, delta=0.0, instance_id="E2")


@pytest.fixture
def build_instance():
    return single_model_instance


@pytest.fixture
def table2():
    """Factory for default-range generated markets"""
    def make(seed: int, **overrides) -> MarketInstance:
        return generate(GeneratorConfig(**overrides), seed)
    return make
