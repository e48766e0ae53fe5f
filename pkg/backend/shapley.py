"""
Exact Shapley contribution shares of datasets to a model
Subset enumeration over a coalition utility, a permutation-average oracle,
and per-model normalization into a ShapleyTable
"""

import logging
from itertools import permutations
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import comb

from backend.errors import NormalizationError, ShapleyArgumentError, ShapleyCapacityError
from backend.market import ShapleyTable

logger = logging.getLogger(__name__)

MAX_GROUND_SET = 20
# Factorial blow-up; the oracle is only meant for small games
MAX_PERMUTATION_GROUND_SET = 9


class CoalitionUtility:
    """
    Utility U(S) over every subset S of a model's datasets.
    Values are stored densely, indexed by the bitmask of S over ground_set order.
    """

    def __init__(self, ground_set: Sequence[str], values: Sequence[float]):
        ground_set = tuple(ground_set)
        if len(ground_set) > MAX_GROUND_SET:
            raise ShapleyCapacityError(
                f"Ground set of {len(ground_set)} datasets exceeds the exact enumeration "
                f"limit of {MAX_GROUND_SET}"
            )
        if len(set(ground_set)) != len(ground_set):
            raise ShapleyArgumentError(f"Ground set contains duplicates: {ground_set}")
        values = np.asarray(values, dtype=float)
        if values.shape != (1 << len(ground_set),):
            raise ShapleyArgumentError(
                f"Expected {1 << len(ground_set)} subset values, got {values.shape[0]}"
            )
        values.setflags(write=False)
        self.ground_set = ground_set
        self.values = values
        self._position = {d: i for i, d in enumerate(ground_set)}

    @classmethod
    def from_table(cls, ground_set: Sequence[str],
                   table: Mapping[FrozenSet[str], float]) -> "CoalitionUtility":
        """Build from an explicit subset -> utility table covering all 2^n subsets"""
        ground_set = tuple(ground_set)
        if len(ground_set) > MAX_GROUND_SET:
            raise ShapleyCapacityError(
                f"Ground set of {len(ground_set)} datasets exceeds {MAX_GROUND_SET}"
            )
        values = []
        for mask in range(1 << len(ground_set)):
            subset = _subset_of(ground_set, mask)
            if subset not in table:
                raise ShapleyArgumentError(f"Utility table is missing subset {sorted(subset)}")
            values.append(float(table[subset]))
        return cls(ground_set, values)

    @classmethod
    def from_callable(cls, ground_set: Sequence[str],
                      utility: Callable[[FrozenSet[str]], float]) -> "CoalitionUtility":
        """Evaluate a utility function once per subset and cache the results"""
        ground_set = tuple(ground_set)
        if len(ground_set) > MAX_GROUND_SET:
            raise ShapleyCapacityError(
                f"Ground set of {len(ground_set)} datasets exceeds {MAX_GROUND_SET}"
            )
        values = [float(utility(_subset_of(ground_set, mask)))
                  for mask in range(1 << len(ground_set))]
        return cls(ground_set, values)

    @property
    def size(self) -> int:
        return len(self.ground_set)

    def position(self, dataset_id: str) -> int:
        try:
            return self._position[dataset_id]
        except KeyError:
            raise ShapleyArgumentError(
                f"Dataset {dataset_id} is not in the ground set {self.ground_set}"
            ) from None

    def mask_of(self, subset: Iterable[str]) -> int:
        mask = 0
        for dataset_id in subset:
            mask |= 1 << self.position(dataset_id)
        return mask

    def __call__(self, subset: Iterable[str]) -> float:
        return float(self.values[self.mask_of(subset)])


def _subset_of(ground_set: Sequence[str], mask: int) -> FrozenSet[str]:
    return frozenset(d for i, d in enumerate(ground_set) if mask >> i & 1)


def _subset_sizes(n: int) -> np.ndarray:
    masks = np.arange(1 << n)
    sizes = np.zeros_like(masks)
    for b in range(n):
        sizes += (masks >> b) & 1
    return sizes


def shapley_exact(u: CoalitionUtility, dataset_id: str) -> float:
    """
    Exact Shapley value of one dataset by full subset enumeration

    SV_i = sum over S not containing i of |S|!(n-|S|-1)!/n! * (U(S+i) - U(S)),
    written with the weight 1/(n * C(n-1, |S|)).

    Args:
        u: Coalition utility over the model's datasets
        dataset_id: Dataset whose contribution is measured

    Returns:
        Raw (unnormalized) Shapley value
    """
    n = u.size
    bit = 1 << u.position(dataset_id)
    masks = np.arange(1 << n)
    without = masks[(masks & bit) == 0]
    sizes = _subset_sizes(n)[without]
    weights = 1.0 / (n * comb(n - 1, sizes))
    marginals = u.values[without | bit] - u.values[without]
    return float(np.sum(weights * marginals))


def shapley_values(u: CoalitionUtility) -> Dict[str, float]:
    """Raw Shapley values for every dataset in the ground set"""
    return {d: shapley_exact(u, d) for d in u.ground_set}


def shapley_permutation_average(u: CoalitionUtility) -> Dict[str, float]:
    """Average marginal contribution over all n! orderings; independent oracle"""
    n = u.size
    if n > MAX_PERMUTATION_GROUND_SET:
        raise ShapleyCapacityError(
            f"Permutation oracle limited to {MAX_PERMUTATION_GROUND_SET} datasets, got {n}"
        )
    totals = np.zeros(n)
    count = 0
    for order in permutations(range(n)):
        mask = 0
        for i in order:
            totals[i] += u.values[mask | (1 << i)] - u.values[mask]
            mask |= 1 << i
        count += 1
    return {d: float(totals[i] / count) for i, d in enumerate(u.ground_set)}


def normalize_shares(raw: Mapping[str, float], model_id: Optional[str] = None) -> Dict[str, float]:
    """
    Turn a raw Shapley column into nonnegative shares summing to 1.
    Negative entries are clamped to 0 first; the raw column must have a positive sum.
    """
    raw_total = float(sum(raw.values()))
    if not raw_total > 0:
        raise NormalizationError(model_id, raw_total)

    negatives = {d: v for d, v in raw.items() if v < 0}
    if negatives:
        logger.warning(f"Clamping negative Shapley values to 0 for {model_id or 'column'}: {negatives}")
    clamped = {d: max(float(v), 0.0) for d, v in raw.items()}
    total = sum(clamped.values())
    return {d: v / total for d, v in clamped.items()}


def shapley_table(utilities: Mapping[str, CoalitionUtility]) -> ShapleyTable:
    """Normalized Shapley column for each model's utility"""
    shares = {}
    for model_id, u in utilities.items():
        shares[model_id] = normalize_shares(shapley_values(u), model_id)
        logger.debug(f"Shapley shares for {model_id}: {shares[model_id]}")
    return ShapleyTable(shares)


def submodular_utility(ground_set: Sequence[str], rng: np.random.Generator,
                       exponent: float = 0.5) -> CoalitionUtility:
    """
    Synthetic monotone submodular utility U(S) = (sum of w_i over S) ** exponent
    with per-dataset qualities w_i ~ Unif[0.1, 1.0]
    """
    if not 0 < exponent <= 1:
        raise ShapleyArgumentError(f"exponent must lie in (0, 1], got {exponent}")
    weights = rng.uniform(0.1, 1.0, size=len(ground_set))
    n = len(ground_set)
    if n > MAX_GROUND_SET:
        raise ShapleyCapacityError(f"Ground set of {n} datasets exceeds {MAX_GROUND_SET}")
    masks = np.arange(1 << n)
    mass = np.zeros(1 << n)
    for b in range(n):
        mass += ((masks >> b) & 1) * weights[b]
    return CoalitionUtility(ground_set, mass ** exponent)
