# Marks the backend directory as a Python package.
# Core types and entry points of the market engine are re-exported here.

from backend.errors import (
    ConfigurationError,
    InstanceParseError,
    MarketError,
    NormalizationError,
    ShapleyArgumentError,
    ShapleyCapacityError,
    SolverError,
    StructuralError,
)
from backend.market import MarketInstance, PriceVector, ShapleyTable, acceptance_check, validate
from backend.quotation import QuotationParams, joint_operator, residual
from backend.solver import EquilibriumReport, Schedule, SolverConfig, closed_form_equilibrium, solve
