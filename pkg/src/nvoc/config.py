"""Configuration for the package: runtime settings, physical constants, unit parsing."""

# %% [markdown]
# ## Imports

# %%
import json
import os
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Annotated, Any, Literal

from dotenv import load_dotenv
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    ValidationError,
    computed_field,
    field_validator,
    model_validator,
)

from nvoc.errors import ConfigurationError
from nvoc.utils import TWO_PI

# %%
load_dotenv()

TOOL_VERSION = "1.0.0"


def _env(name: str, default: str) -> Any:
    return lambda: os.getenv(f"NVOC_{name}", default)


# %% [markdown]
# ## Runtime settings


# %%
class Settings(BaseModel):
    model_config = ConfigDict(
        arbitrary_types_allowed=True, extra="forbid", validate_default=True
    )

    log_level: str = Field(default_factory=_env("LOG_LEVEL", "INFO"))
    workers: int = Field(
        default_factory=lambda: int(os.getenv("NVOC_WORKERS", os.cpu_count() or 1)),
        ge=1,
        description="Default number of worker processes for scans.",
    )
    constants_path: str | None = Field(
        default_factory=lambda: os.getenv("NVOC_CONSTANTS"),
        description="Physical-constants file overriding the packaged table.",
    )
    integrator_rtol: float = Field(
        default_factory=_env("INTEGRATOR_RTOL", "1e-9"),
        gt=0,
        description="Relative tolerance of the adaptive master-equation integrator.",
    )
    integrator_atol: float = Field(
        default_factory=_env("INTEGRATOR_ATOL", "1e-12"),
        gt=0,
        description="Absolute tolerance of the adaptive master-equation integrator.",
    )
    steady_state_rcond: float = Field(
        default_factory=_env("STEADY_STATE_RCOND", "1e-10"),
        gt=0,
        description="Singular values below rcond * max are treated as null space.",
    )
    adiabatic_threshold: float = Field(
        default_factory=_env("ADIABATIC_THRESHOLD", "0.1"),
        gt=0,
        description="adiabaticity_check values below this mark the valid two-photon regime.",
    )
    coupling_cutoff_hz: float = Field(
        default_factory=_env("COUPLING_CUTOFF_HZ", "500e6"),
        gt=0,
        description="A tone couples every allowed transition within this distance (Hz).",
    )
    continuation_steps: int = Field(
        default_factory=_env("CONTINUATION_STEPS", "64"),
        ge=1,
        description="Strain steps used to carry excited-state labels from zero strain.",
    )

    @computed_field
    @property
    def coupling_cutoff(self) -> float:
        """Cutoff as angular frequency."""
        return TWO_PI * self.coupling_cutoff_hz


# %% [markdown]
# ## Quantities in configuration files
# A quantity is either a plain number in the canonical unit of its field or
# `{"value": x, "unit": "<unit>"}`. A unit from another dimension is rejected.

# %%
FREQUENCY_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
DURATION_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
POWER_UNITS = {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "nW": 1e-9}
RATE_UNITS = {"per_s": 1.0, "per_ms": 1e3, "per_us": 1e6}


def _quantity(dimension: str, units: dict[str, float]) -> BeforeValidator:
    def parse(value: Any) -> Any:
        if not isinstance(value, dict):
            return value
        if set(value) != {"value", "unit"}:
            raise ValueError(f"a {dimension} must be a number or {{'value', 'unit'}}")
        unit = value["unit"]
        if unit not in units:
            raise ValueError(
                f"unit mismatch: '{unit}' is not a {dimension} unit "
                f"(expected one of {', '.join(units)})"
            )
        return float(value["value"]) * units[unit]

    return BeforeValidator(parse)


Hz = Annotated[float, _quantity("frequency", FREQUENCY_UNITS)]
Seconds = Annotated[float, _quantity("duration", DURATION_UNITS)]
Watts = Annotated[float, _quantity("power", POWER_UNITS)]
PerSecond = Annotated[float, _quantity("rate", RATE_UNITS)]


# %%
def validation_message(err: ValidationError, source: str = "") -> str:
    """One `path: message` line per pydantic problem."""
    lines = []
    for problem in err.errors():
        where = ".".join(str(part) for part in problem["loc"]) or "<root>"
        if problem["type"] == "extra_forbidden":
            lines.append(f"{where}: unknown key '{problem['loc'][-1]}'")
        else:
            lines.append(f"{where}: {problem['msg']}")
    prefix = f"{source}: " if source else ""
    return prefix + "; ".join(lines)


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"{path}: file not found", path=str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"{path}: parse error at line {e.lineno} column {e.colno}: {e.msg}",
            path=str(path),
        ) from e


# %% [markdown]
# ## Physical constants
# The packaged table is versioned; a user table must use the same parameter names.

# %%
ConstantUnit = Literal["rad_per_s", "Hz_times_2pi", "per_s", "dimensionless"]

_DIMENSION_UNITS: dict[str, set[str]] = {
    "frequency": {"rad_per_s", "Hz_times_2pi"},
    "rate": {"per_s"},
    "dimensionless": {"dimensionless"},
}

EXCITED_NAMES = ("A1", "A2", "Ex", "Ey", "E1", "E2")


class ConstantEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    value: float
    unit: ConstantUnit
    note: str = ""

    def angular(self) -> float:
        """Value in package units: rad/s for frequencies, 1/s for rates."""
        return TWO_PI * self.value if self.unit == "Hz_times_2pi" else self.value


class ConstantParameters(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    zero_field_splitting: ConstantEntry
    spin_orbit: ConstantEntry
    spin_spin_parallel: ConstantEntry
    spin_spin_perpendicular: ConstantEntry
    spin_spin_mixing: ConstantEntry
    a1_a2_gap: ConstantEntry
    excited_decay_rate: ConstantEntry
    detuning_uncertainty: ConstantEntry
    two_photon_detuning: ConstantEntry
    dark_map_zeeman_splitting: ConstantEntry
    collection_efficiency: ConstantEntry

    @model_validator(mode="after")
    def _check_dimensions(self) -> "ConstantParameters":
        dimensions = {
            "excited_decay_rate": "rate",
            "collection_efficiency": "dimensionless",
        }
        for name in type(self).model_fields:
            entry: ConstantEntry = getattr(self, name)
            dimension = dimensions.get(name, "frequency")
            if entry.unit not in _DIMENSION_UNITS[dimension]:
                raise ValueError(
                    f"unit mismatch for '{name}': '{entry.unit}' is not a {dimension} unit"
                )
        return self


class ConstantsFile(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    version: str = Field(pattern=r"^\d+\.\d+\.\d+$")
    parameters: ConstantParameters
    branching: dict[str, tuple[float, float, float]] = Field(
        description="Excited state -> probabilities of decay into |0>, |+1>, |-1>."
    )

    @field_validator("branching")
    @classmethod
    def _check_branching(
        cls, value: dict[str, tuple[float, float, float]]
    ) -> dict[str, tuple[float, float, float]]:
        unknown = set(value) - set(EXCITED_NAMES)
        if unknown:
            raise ValueError(f"unknown excited state(s) {sorted(unknown)}")
        missing = set(EXCITED_NAMES) - set(value)
        if missing:
            raise ValueError(f"missing excited state(s) {sorted(missing)}")
        for name, probabilities in value.items():
            if min(probabilities) < 0 or abs(sum(probabilities) - 1.0) > 1e-9:
                raise ValueError(f"branching of {name} must be non-negative and sum to 1")
        return value

    def angular(self, name: str) -> float:
        return getattr(self.parameters, name).angular()

    def table(self) -> list[tuple[str, float, str, str]]:
        """Rows of (name, value as written, unit, note) for display."""
        rows = []
        for name in type(self.parameters).model_fields:
            entry: ConstantEntry = getattr(self.parameters, name)
            rows.append((name, entry.value, entry.unit, entry.note))
        return rows


# %%
def _packaged_constants() -> Path:
    return Path(str(resources.files("nvoc") / "data" / "constants.json"))


@lru_cache(maxsize=8)
def _load_constants(path: Path) -> ConstantsFile:
    try:
        return ConstantsFile.model_validate(read_json(path))
    except ValidationError as e:
        raise ConfigurationError(validation_message(e, str(path)), path=str(path)) from e


def load_constants(path: str | Path | None = None) -> ConstantsFile:
    """Load and validate a constants table (default: `NVOC_CONSTANTS` or packaged)."""
    if path is None:
        path = settings.constants_path or _packaged_constants()
    return _load_constants(Path(path).resolve())


# %%
settings = Settings()
