"""Exception hierarchy shared by all modules.

Every error carries a message plus an optional `details` mapping, and serializes to the
machine-readable form written to `error.json` by the CLI.
"""

# %%
from typing import Any


# %%
class NVOCError(Exception):
    """Base class for every error raised by the package."""

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


class ConfigurationError(NVOCError, ValueError):
    """Invalid configuration: unknown key, unit mismatch, out-of-range value, bad shape."""


class DomainError(NVOCError, ValueError):
    """Closed-form expression evaluated outside its domain."""


class CompilationError(NVOCError):
    """A pulse sequence cannot be mapped onto a single consistent rotating frame."""


class StiffnessError(NVOCError):
    """The adaptive integrator failed (step size underflow or similar)."""


class NumericalError(NVOCError):
    """A numerical guard tripped: trace drift, positivity loss or a large residual."""


class CalibrationError(NVOCError):
    """A calibration root could not be bracketed."""


# %%
def _jsonable(value: Any) -> Any:
    if isinstance(value, str | int | float | bool) or value is None:
        return value
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return str(value)
