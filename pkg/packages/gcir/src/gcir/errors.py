from __future__ import annotations


class GcirError(Exception):
    error_type = "InternalError"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ConfigError(GcirError):
    error_type = "ValidationError"


class UsageError(GcirError):
    error_type = "BadRequest"


class DomainError(GcirError):
    error_type = "DomainError"


class RegimeError(GcirError):
    error_type = "RegimeError"


class StabilityError(GcirError):
    error_type = "StabilityError"


class NonFiniteError(GcirError):
    """Raised when a solver or a path produces NaN/inf.

    `where` locates the failure: {"time_level", "node"} for the PDE,
    {"step"} (and optionally "path") for the simulator.
    """

    error_type = "NonFiniteError"

    def __init__(self, message: str, **where: int) -> None:
        super().__init__(message)
        self.where = where


class ToleranceError(GcirError):
    error_type = "ToleranceError"
