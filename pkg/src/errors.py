from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for every failure raised by the lab.

    ``stage`` names the pipeline step that failed and ``details`` carries the
    numbers that go into the JSON diagnostics.
    """

    def __init__(self, message: str, stage: Optional[str] = None, **details: Any):
        super().__init__(message)
        self.stage = stage
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "stage": self.stage,
            "details": self.details,
        }


class ConfigurationError(LabError):
    pass


class InfeasiblePinchError(ConfigurationError):
    """K_max does not exceed 1/R^2, so no pinched sphere exists."""


class DomainRangeError(LabError):
    pass


class ContractViolation(LabError):
    pass


class ConsistencyError(LabError):
    pass


class IntegrationError(LabError):
    pass


class ConvexityViolation(LabError):
    pass


class ReturnNotFoundError(LabError):
    pass


class NoBracketError(LabError):
    pass


class ClosureError(LabError):
    pass


class ProximityError(LabError):
    pass


class QuadratureError(LabError):
    pass


class FramingError(LabError):
    pass


class ChartError(LabError):
    pass


class DegeneracyError(LabError):
    pass


class OracleDisagreement(LabError):
    """Two independent computations of the same quantity disagree."""
