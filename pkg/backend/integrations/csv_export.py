"""
CSV artifacts: residual traces, envelopes and experiment tables
Each writer emits exactly its documented columns, header row included
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from backend.errors import StructuralError
from backend.feasibility import FeasibilityEnvelope
from backend.solver import EquilibriumReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRACE_COLUMNS = ["instance_id", "schedule", "iteration", "residual"]
ENVELOPE_COLUMNS = ["axis1", "axis2_analytic_max", "axis2_numeric_max", "binding_model", "binding_buyer"]
FAIRNESS_COLUMNS = ["seed", "rho", "method", "model", "spearman", "sv", "share"]
STRESS_COLUMNS = ["axis", "value", "method", "success_rate"]
PROPAGATION_COLUMNS = ["stage", "method", "side", "value"]
ENVELOPE_EXPERIMENT_COLUMNS = ["panel", "x", "analytic_y", "numeric_y"]


def _write(frame: pd.DataFrame, columns: Sequence[str], path: PathLike) -> Path:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise StructuralError(f"Cannot write {path}: missing columns {missing}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.loc[:, list(columns)].to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def trace_frame(reports: Sequence[EquilibriumReport]) -> pd.DataFrame:
    rows = [
        {"instance_id": r.instance_id, "schedule": r.schedule.value, "iteration": t, "residual": value}
        for r in reports
        for t, value in enumerate(r.residual_trace)
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def write_trace(reports: Sequence[EquilibriumReport], path: PathLike) -> Path:
    return _write(trace_frame(reports), TRACE_COLUMNS, path)


def write_envelope(envelope: FeasibilityEnvelope, path: PathLike) -> Path:
    return _write(envelope.to_frame(), ENVELOPE_COLUMNS, path)


def write_fairness(frame: pd.DataFrame, path: PathLike) -> Path:
    return _write(frame, FAIRNESS_COLUMNS, path)


def write_stress(curve: pd.DataFrame, path: PathLike) -> Path:
    """Expects the seed-averaged curve"""
    return _write(curve, STRESS_COLUMNS, path)


def write_propagation(frame: pd.DataFrame, path: PathLike) -> Path:
    return _write(frame, PROPAGATION_COLUMNS, path)


def write_envelope_experiment(frame: pd.DataFrame, path: PathLike) -> Path:
    return _write(frame, ENVELOPE_EXPERIMENT_COLUMNS, path)
