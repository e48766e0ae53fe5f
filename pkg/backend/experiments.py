"""
Desk-scale experiment harness
Fairness alignment, stress tests, price propagation and feasibility envelopes
over seeded synthetic markets. Every function returns a tidy DataFrame whose
rows are ordered by the loop keys, so reruns are identical.
"""

import logging
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from backend.baselines import DEFAULT_BASELINE, BaselineConfig, Method, price, staged_propagation
from backend.errors import ConfigurationError
from backend.feasibility import Axis, numerical_frontier
from backend.generator import GeneratorConfig, generate
from backend.market import MarketInstance, acceptance_check
from backend.metrics import buyer_surplus, revenue_shares, seller_profit, spearman_by_model
from backend.quotation import QuotationParams
from backend.solver import SolverConfig

logger = logging.getLogger(__name__)

ALL_METHODS = (Method.TRIPLEWIN, Method.SUPPLY_FIRST, Method.DEMAND_FIRST, Method.BROKER_CENTRIC)
DEFAULT_RHO_GRID = (0.4, 0.6, 0.8, 0.99)
DEFAULT_ALPHA_R_GRID = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
DEFAULT_ALPHA_DELTA_GRID = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0)
DEFAULT_ENVELOPE_GRID = (0.5, 1.0, 2.0)
SUSTAIN_THRESHOLD = 0.95

ALPHA_R = "alpha_R"
ALPHA_DELTA = "alpha_delta"

ENVELOPE_PANELS = {
    "kd_delta": (Axis.ALPHA_KD, Axis.ALPHA_DELTA),
    "km_delta": (Axis.ALPHA_KM, Axis.ALPHA_DELTA),
    "kd_km": (Axis.ALPHA_KD, Axis.ALPHA_KM),
}


def fairness_experiment(seeds: Iterable[int], rho_grid: Sequence[float] = DEFAULT_RHO_GRID,
                        methods: Sequence[Method] = ALL_METHODS,
                        generator_config: Optional[GeneratorConfig] = None,
                        config: Optional[SolverConfig] = None,
                        baseline: BaselineConfig = DEFAULT_BASELINE) -> pd.DataFrame:
    """
    Scatter of (SV, realized revenue share) per data edge, with the model's Spearman
    correlation repeated on each of its rows

    Returns:
        DataFrame with columns seed, rho, method, model, spearman, sv, share
    """
    generator_config = generator_config or GeneratorConfig()
    rows = []
    for seed in seeds:
        for rho in rho_grid:
            instance = generate(replace(generator_config, rho=rho), seed)
            for method in methods:
                prices = price(instance, method, baseline=baseline, config=config)
                shares = revenue_shares(instance, prices)
                spearman = spearman_by_model(instance, prices)
                for model_id, column in shares.items():
                    sv = instance.shapley.shares[model_id]
                    for dataset_id, share in column.items():
                        rows.append({
                            "seed": seed,
                            "rho": rho,
                            "method": method.value,
                            "model": model_id,
                            "spearman": spearman[model_id],
                            "sv": sv[dataset_id],
                            "share": share,
                        })
        logger.debug(f"Fairness seed {seed} done")
    return pd.DataFrame(rows, columns=["seed", "rho", "method", "model", "spearman", "sv", "share"])


def mean_spearman(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean per-model Spearman per (rho, method); skipped models do not count"""
    per_model = frame.drop_duplicates(["seed", "rho", "method", "model"])
    return (
        per_model.groupby(["rho", "method"], sort=True)["spearman"]
        .mean()
        .reset_index()
        .rename(columns={"spearman": "mean_spearman"})
    )


def stress_experiment(seeds: Iterable[int], alpha_r_grid: Sequence[float] = DEFAULT_ALPHA_R_GRID,
                      alpha_delta_grid: Sequence[float] = DEFAULT_ALPHA_DELTA_GRID,
                      methods: Sequence[Method] = ALL_METHODS,
                      generator_config: Optional[GeneratorConfig] = None,
                      config: Optional[SolverConfig] = None,
                      baseline: BaselineConfig = DEFAULT_BASELINE) -> pd.DataFrame:
    """
    Market success rate when all reserves are scaled by alpha_R, and when all
    margins are scaled by alpha_delta

    Returns:
        DataFrame with columns seed, axis, value, method, success_rate
    """
    if any(a <= 0 for a in alpha_r_grid) or any(a < 0 for a in alpha_delta_grid):
        raise ConfigurationError("Stress grids must be positive (alpha_delta may be 0)")
    generator_config = generator_config or GeneratorConfig()
    rows = []
    for seed in seeds:
        instance = generate(generator_config, seed)
        for alpha_r in alpha_r_grid:
            scaled = instance.with_scaled_reserves(alpha_r)
            for method in methods:
                prices = price(scaled, method, baseline=baseline, config=config)
                rows.append({
                    "seed": seed, "axis": ALPHA_R, "value": alpha_r, "method": method.value,
                    "success_rate": acceptance_check(scaled, prices).success_rate,
                })
        for alpha_delta in alpha_delta_grid:
            params = QuotationParams(alpha_delta=alpha_delta)
            for method in methods:
                prices = price(instance, method, params, baseline=baseline, config=config)
                rows.append({
                    "seed": seed, "axis": ALPHA_DELTA, "value": alpha_delta, "method": method.value,
                    "success_rate": acceptance_check(instance, prices).success_rate,
                })
    return pd.DataFrame(rows, columns=["seed", "axis", "value", "method", "success_rate"])


def stress_curve(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean success rate over seeds per (axis, value, method)"""
    return (
        frame.groupby(["axis", "value", "method"], sort=True)["success_rate"]
        .mean()
        .reset_index()
    )


def stress_summary(frame: pd.DataFrame, threshold: float = SUSTAIN_THRESHOLD) -> pd.DataFrame:
    """
    Largest scaling each method sustains. For alpha_delta (stress grows with the value)
    this is the last grid value of the prefix where mean success stays >= threshold;
    for alpha_R (stress shrinks with the value) the first value of the matching suffix.
    nan when no grid value qualifies.
    """
    curve = stress_curve(frame)
    rows = []
    for (axis, method), group in curve.groupby(["axis", "method"], sort=True):
        group = group.sort_values("value", ascending=(axis != ALPHA_R))
        sustained = np.nan
        for value, rate in zip(group["value"], group["success_rate"]):
            if rate < threshold:
                break
            sustained = value
        rows.append({"axis": axis, "method": method, "sustained": sustained})
    return pd.DataFrame(rows, columns=["axis", "method", "sustained"])


def _stage_states(instance: MarketInstance, method: Method, stages: Sequence[int],
                  config: Optional[SolverConfig], baseline: BaselineConfig) -> Dict[str, object]:
    result = staged_propagation(instance, method, max(stages), baseline=baseline, config=config)
    states = {str(s): result.stage(s) for s in stages}
    states["converged"] = result.converged
    return states


def propagation_experiment(seeds: Iterable[int], methods: Sequence[Method] = ALL_METHODS,
                           stages: Optional[Sequence[int]] = None,
                           generator_config: Optional[GeneratorConfig] = None,
                           config: Optional[SolverConfig] = None,
                           baseline: BaselineConfig = DEFAULT_BASELINE) -> pd.DataFrame:
    """
    Buyer surplus and seller profit per edge at each propagation stage, divided by
    the largest absolute value over both sides of the same (seed, method, stage)
    Stages default to 0, 1 and baseline.propagation_rounds.

    Returns:
        DataFrame with columns seed, stage, method, side, edge, value
    """
    if stages is None:
        stages = sorted({0, 1, baseline.propagation_rounds})
    generator_config = generator_config or GeneratorConfig()
    rows = []
    for seed in seeds:
        instance = generate(generator_config, seed)
        index = instance.index
        for method in methods:
            for stage, prices in _stage_states(instance, method, stages, config, baseline).items():
                surplus = buyer_surplus(instance, prices)
                profit = seller_profit(instance, prices)
                scale = float(np.max(np.abs(np.concatenate([surplus, profit]))))
                scale = scale if scale > 0 else 1.0
                for key, value in zip(index.buyer_keys, surplus):
                    rows.append({"seed": seed, "stage": stage, "method": method.value,
                                 "side": "buyer_surplus", "edge": f"{key[0]}->{key[1]}", "value": value / scale})
                for key, value in zip(index.data_keys, profit):
                    rows.append({"seed": seed, "stage": stage, "method": method.value,
                                 "side": "seller_profit", "edge": f"{key[0]}->{key[1]}", "value": value / scale})
    return pd.DataFrame(rows, columns=["seed", "stage", "method", "side", "edge", "value"])


def propagation_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Box statistics of the normalized values per (stage, method, side)"""
    grouped = frame.groupby(["stage", "method", "side"], sort=True)["value"]
    summary = grouped.quantile([0.0, 0.25, 0.5, 0.75, 1.0]).unstack()
    summary.columns = ["min", "q1", "median", "q3", "max"]
    return summary.reset_index()


def envelope_experiment(seeds: Iterable[int] = (), instances: Sequence[MarketInstance] = (),
                        grid: Sequence[float] = DEFAULT_ENVELOPE_GRID,
                        generator_config: Optional[GeneratorConfig] = None,
                        config: Optional[SolverConfig] = None) -> pd.DataFrame:
    """
    Analytic envelope next to the bisected numerical frontier on three panels
    ((kappa_D, delta), (kappa_M, delta), (kappa_D, kappa_M) at unit delta scaling).
    Empty points report 0 on both curves with status "empty".

    Returns:
        DataFrame with columns instance, panel, x, analytic_y, numeric_y, status
    """
    generator_config = generator_config or GeneratorConfig()
    markets: List[MarketInstance] = list(instances) + [generate(generator_config, s) for s in seeds]
    rows = []
    for instance in markets:
        for panel, (x_axis, y_axis) in ENVELOPE_PANELS.items():
            envelope = numerical_frontier(instance, x_axis, y_axis, grid, 1.0, config)
            for point in envelope.points:
                rows.append({
                    "instance": instance.instance_id,
                    "panel": panel,
                    "x": point.x,
                    "analytic_y": point.analytic,
                    "numeric_y": point.numeric,
                    "status": point.status.value,
                })
            logger.debug(f"Envelope panel {panel} done for {instance.instance_id}")
    return pd.DataFrame(rows, columns=["instance", "panel", "x", "analytic_y", "numeric_y", "status"])
