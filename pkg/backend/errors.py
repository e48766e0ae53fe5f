"""
Exception hierarchy for the market engine.
Validation outcomes are returned as data; these cover genuine faults.
"""

from typing import Optional


class MarketError(Exception):
    """Base class for all market engine faults"""


class ConfigurationError(MarketError):
    """Invalid setting, flag value or missing input required by a method"""


class StructuralError(MarketError):
    """Price vector or array does not line up with the instance's edges"""


class InstanceParseError(MarketError):
    """Malformed instance or utility document"""

    def __init__(self, path: str, reason: str):
        self.path = path or "/"
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class ShapleyCapacityError(MarketError):
    """Ground set too large for exact subset enumeration"""


class ShapleyArgumentError(MarketError):
    """Dataset requested is not part of the utility's ground set"""


class NormalizationError(MarketError):
    """Raw Shapley column cannot be turned into nonnegative shares"""

    def __init__(self, model_id: Optional[str], total: float):
        self.model_id = model_id
        self.total = total
        label = f"model {model_id}" if model_id else "column"
        super().__init__(f"Raw Shapley sum for {label} is {total!r}; cannot normalize")


class SolverError(MarketError):
    """A solver postcondition does not hold"""
