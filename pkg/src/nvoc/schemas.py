"""Configuration files of every recipe and of pulse-sequence files.

Files are JSON. Frequencies are written in Hz (`*_hz`), durations in seconds (`*_s`),
powers in watts (`*_w`) and rates in 1/s (`*_per_s`); any quantity may instead be
`{"value": x, "unit": "MHz"}`. The models keep file units, so dumping and reloading a
config is exact. Conversion to angular frequency happens in the builder methods.
"""

# %% [markdown]
# ## Imports

# %%
from pathlib import Path
from typing import Annotated, Literal, TypeVar

import numpy as np
from numpy.typing import NDArray
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from nvoc.config import (
    Hz,
    PerSecond,
    Seconds,
    Watts,
    load_constants,
    read_json,
    validation_message,
)
from nvoc.dynamics import CollapseChannel
from nvoc.errors import ConfigurationError
from nvoc.fields import (
    POLARIZATIONS,
    DriveField,
    MicrowaveDrive,
    PulseSegment,
    Sideband,
    TripodParams,
)
from nvoc.levels import (
    DecayParams,
    ExcitedParams,
    GroundParams,
    LevelModel,
    StateLabel,
    calibrate_strain,
    nv_level_model,
)
from nvoc.utils import TWO_PI, to_angular

Model = TypeVar("Model", bound=BaseModel)


def _constant_hz(name: str) -> float:
    return load_constants().angular(name) / TWO_PI


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# %% [markdown]
# ## Axes


# %%
class FrequencyAxis(_Config):
    start_hz: Hz
    stop_hz: Hz
    points: int = Field(ge=2)

    def values(self) -> NDArray[np.float64]:
        return np.linspace(self.start_hz, self.stop_hz, self.points)

    @property
    def step_hz(self) -> float:
        return (self.stop_hz - self.start_hz) / (self.points - 1)


class TimeAxis(_Config):
    start_s: Seconds = 0.0
    stop_s: Seconds = Field(gt=0)
    points: int = Field(default=101, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "TimeAxis":
        if self.start_s < 0 or self.stop_s <= self.start_s:
            raise ValueError("time axis needs 0 <= start_s < stop_s")
        return self

    def values(self) -> NDArray[np.float64]:
        return np.linspace(self.start_s, self.stop_s, self.points)


# %% [markdown]
# ## Level model


# %%
class ModelConfig(_Config):
    """NV level model; unset values come from the constants table."""

    zfs_hz: Hz | None = Field(default=None, gt=0)
    zeeman_hz: Hz = Field(default=0.0, ge=0)
    detuning_spread_hz: Hz = Field(default=0.0, ge=0)
    strain: Literal["calibrated", "explicit"] = "calibrated"
    strain_x_hz: Hz = 0.0
    strain_y_hz: Hz = 0.0
    a1_a2_gap_hz: Hz | None = Field(default=None, gt=0)
    spin_orbit_hz: Hz | None = None
    spin_spin_parallel_hz: Hz | None = None
    spin_spin_perp_hz: Hz | None = None
    spin_spin_mixing_hz: Hz | None = None
    decay_rate_per_s: PerSecond | None = Field(default=None, ge=0)
    branching: dict[StateLabel, tuple[float, float, float]] | None = None
    pure_selection: bool = False

    @model_validator(mode="after")
    def _strain_fields(self) -> "ModelConfig":
        if self.strain == "calibrated" and (self.strain_x_hz or self.strain_y_hz):
            raise ValueError("strain_x_hz/strain_y_hz need strain='explicit'")
        return self

    def ground_params(self) -> GroundParams:
        values = {
            "zeeman_delta": to_angular(self.zeeman_hz),
            "detuning_spread": to_angular(self.detuning_spread_hz),
        }
        if self.zfs_hz is not None:
            values["zfs"] = to_angular(self.zfs_hz)
        return GroundParams(**values)

    def excited_params(self) -> ExcitedParams:
        overrides = {
            "spin_orbit": self.spin_orbit_hz,
            "spin_spin_parallel": self.spin_spin_parallel_hz,
            "spin_spin_perp": self.spin_spin_perp_hz,
            "spin_spin_mixing": self.spin_spin_mixing_hz,
        }
        params = ExcitedParams(
            **{k: to_angular(v) for k, v in overrides.items() if v is not None}
        )
        if self.strain == "explicit":
            return params.model_copy(
                update={
                    "strain_x": to_angular(self.strain_x_hz),
                    "strain_y": to_angular(self.strain_y_hz),
                }
            )
        gap = None if self.a1_a2_gap_hz is None else to_angular(self.a1_a2_gap_hz)
        return calibrate_strain(params, gap)

    def decay_params(self) -> DecayParams:
        values: dict = {}
        if self.decay_rate_per_s is not None:
            values["rate"] = self.decay_rate_per_s
        if self.branching is not None:
            values["branching"] = {**DecayParams().branching, **self.branching}
        return DecayParams(**values)

    def level_model(
        self, decay: DecayParams | None = None, pure_selection: bool | None = None
    ) -> LevelModel:
        return nv_level_model(
            self.ground_params(),
            self.excited_params(),
            decay or self.decay_params(),
            pure_selection=self.pure_selection if pure_selection is None else pure_selection,
        )


# %% [markdown]
# ## Drives and sequence files


# %%
JonesSpec = str | tuple[float, float, float]


def _check_polarization(value: JonesSpec) -> JonesSpec:
    if isinstance(value, str) and value not in POLARIZATIONS:
        raise ValueError(f"unknown polarization '{value}' (expected {', '.join(POLARIZATIONS)})")
    if not isinstance(value, str) and not any(value):
        raise ValueError("polarization vector is zero")
    return value


Polarization = Annotated[JonesSpec, AfterValidator(_check_polarization)]


class SidebandConfig(_Config):
    offset_hz: Hz
    amplitude: float = Field(default=0.5, ge=0)
    phase: float = 0.0


class DriveConfig(_Config):
    transition: tuple[StateLabel, StateLabel]
    detuning_hz: Hz = 0.0
    rabi_hz: Hz = Field(ge=0)
    polarization: Polarization = "sigma+"
    sidebands: list[SidebandConfig] = Field(default_factory=list)
    modulation_hz: Hz | None = Field(
        default=None, description="Adds a first-order sideband pair at +- this offset."
    )
    modulation_amplitude: float = Field(default=0.5, ge=0)

    def drive(self) -> DriveField:
        sidebands = [
            Sideband(offset=to_angular(s.offset_hz), amplitude=s.amplitude, phase=s.phase)
            for s in self.sidebands
        ]
        if self.modulation_hz is not None:
            for sign in (1, -1):
                sidebands.append(
                    Sideband(
                        offset=sign * to_angular(self.modulation_hz),
                        amplitude=self.modulation_amplitude,
                    )
                )
        return DriveField(
            transition=self.transition,
            detuning=to_angular(self.detuning_hz),
            rabi=to_angular(self.rabi_hz),
            polarization=self.polarization,
            sidebands=tuple(sidebands),
        )


class MicrowaveConfig(_Config):
    rabi_hz: Hz = Field(ge=0)
    detuning_hz: Hz = 0.0
    target: Literal["+1", "-1"] = "+1"

    def drive(self) -> MicrowaveDrive:
        return MicrowaveDrive(
            rabi=to_angular(self.rabi_hz), detuning=to_angular(self.detuning_hz), target=self.target
        )


class DephasingConfig(_Config):
    level: StateLabel
    rate_per_s: PerSecond = Field(ge=0)


class MixingConfig(_Config):
    levels: tuple[StateLabel, StateLabel]
    rate_per_s: PerSecond = Field(ge=0)


class SegmentConfig(_Config):
    duration_s: Seconds = Field(gt=0)
    label: str = ""
    drives: list[DriveConfig] = Field(default_factory=list)
    microwave: MicrowaveConfig | None = None
    dephasing: list[DephasingConfig] = Field(default_factory=list)
    mixing: list[MixingConfig] = Field(default_factory=list)
    rise_time_s: Seconds = Field(default=0.0, ge=0)

    def segment(self, model: LevelModel) -> PulseSegment:
        channels: list[CollapseChannel] = []
        for d in self.dephasing:
            channels.append(CollapseChannel.dephasing(model.dim, model.index(d.level), d.rate_per_s))
        for m in self.mixing:
            a, b = (model.index(level) for level in m.levels)
            channels.extend(CollapseChannel.mixing(model.dim, a, b, m.rate_per_s))
        return PulseSegment(
            duration=self.duration_s,
            drives=tuple(d.drive() for d in self.drives),
            microwave=None if self.microwave is None else self.microwave.drive(),
            channels=tuple(channels),
            rise_time=self.rise_time_s,
            label=self.label,
        )


class SequenceFile(_Config):
    """Versioned pulse-sequence file run by `nvoc simulate`."""

    schema_version: Literal[1] = 1
    model: ModelConfig = Field(default_factory=ModelConfig)
    initial: dict[StateLabel, float] = Field(default_factory=lambda: {StateLabel.ZERO: 1.0})
    segments: list[SegmentConfig] = Field(min_length=1)
    samples_per_segment: int = Field(default=101, ge=2)
    coherences: bool = False

    @field_validator("initial")
    @classmethod
    def _populations(cls, value: dict[StateLabel, float]) -> dict[StateLabel, float]:
        if any(p < 0 for p in value.values()) or sum(value.values()) <= 0:
            raise ValueError("initial populations must be non-negative with a positive sum")
        return value

    def segments_for(self, model: LevelModel) -> list[PulseSegment]:
        return [s.segment(model) for s in self.segments]

    def initial_populations(self, model: LevelModel) -> NDArray[np.float64]:
        p = np.zeros(model.dim)
        for label, value in self.initial.items():
            p[model.index(label)] = value
        return p / p.sum()


# %% [markdown]
# ## Recipes


# %%
class ReadoutConfig(_Config):
    """Optical pi pulse on a ground -> A2 transition followed by a collection window."""

    rabi_hz: Hz = Field(default=100e6, gt=0)
    polarization: Polarization = "sigma-"
    collection_s: Seconds = Field(default=100e-9, ge=0)


class PumpStepsConfig(_Config):
    """Two-step pumping: 0 -> Ex, then a polarized drive on the |+-1> -> A2 lines."""

    step1_duration_s: Seconds = Field(default=20e-6, gt=0)
    step1_rabi_hz: Hz = Field(default=20e6, gt=0)
    step2_duration_s: Seconds = Field(default=400e-9, gt=0)
    step2_rabi_hz: Hz = Field(default=50e6, gt=0)
    settle_s: Seconds = Field(default=100e-9, ge=0)


class PumpConfig(_Config):
    model: ModelConfig = Field(default_factory=ModelConfig)
    target: Literal["-1", "+1", "superposition"] = "-1"
    superposition: tuple[float, float] = Field(
        default=(1.0, 1.0), description="Real amplitudes of |+1> and |-1> in the target."
    )
    superposition_phase: float = 0.0
    steps: PumpStepsConfig = Field(default_factory=PumpStepsConfig)
    off_resonant: bool = True
    decay_to_zero: bool = True
    imperfect_selection: bool = True
    polarization_extinction: float = Field(default=0.01, ge=0, lt=1)
    attribution: bool = True
    readout: ReadoutConfig | None = None

    @model_validator(mode="after")
    def _superposition(self) -> "PumpConfig":
        if self.target == "superposition" and not any(self.superposition):
            raise ValueError("superposition amplitudes are both zero")
        return self

    def target_vector(self) -> NDArray[np.complex128]:
        """Target state as amplitudes on (|+1>, |-1>)."""
        if self.target == "+1":
            return np.array([1, 0], dtype=complex)
        if self.target == "-1":
            return np.array([0, 1], dtype=complex)
        a, b = self.superposition
        v = np.array([a, b * np.exp(1j * self.superposition_phase)], dtype=complex)
        return v / np.linalg.norm(v)


class PleConfig(_Config):
    model: ModelConfig = Field(default_factory=ModelConfig)
    mode: Literal["steady_state", "integrated"] = "steady_state"
    laser: FrequencyAxis | None = Field(
        default=None,
        description="Laser frequency relative to |0> (Hz); unset spans every line with a "
        "margin of `margin_hz` at steps of `step_hz`.",
    )
    margin_hz: Hz = Field(default=1e9, gt=0)
    step_hz: Hz = Field(default=10e6, gt=0)
    rabi_hz: Hz = Field(default=10e6, ge=0)
    polarization: JonesSpec = "unpolarized"
    microwave_mixing_per_s: PerSecond = Field(
        default=1e6, ge=0, description="Ground-state mixing by the CW microwave; 0 = off."
    )
    initial: dict[StateLabel, float] = Field(default_factory=lambda: {StateLabel.ZERO: 1.0})
    dwell_s: Seconds = Field(default=1e-6, gt=0)
    peak_prominence: float = Field(default=1e-3, ge=0)
    refine_span_hz: Hz = Field(
        default=10e6, gt=0, description="Half-width of the fine re-scan around each line."
    )
    refine_points_per_side: int = Field(
        default=5, ge=0, description="Fine points on each side of a line; 0 = no re-scan."
    )

    @field_validator("polarization")
    @classmethod
    def _polarization(cls, value: JonesSpec) -> JonesSpec:
        return value if value == "unpolarized" else _check_polarization(value)


class MicrowaveRabiConfig(_Config):
    model: ModelConfig = Field(default_factory=lambda: ModelConfig(zeeman_hz=56e6))
    microwave: MicrowaveConfig = Field(default_factory=lambda: MicrowaveConfig(rabi_hz=5e6))
    durations: TimeAxis = Field(default_factory=lambda: TimeAxis(stop_s=400e-9, points=81))
    initial: StateLabel = StateLabel.ZERO
    readout: ReadoutConfig = Field(default_factory=ReadoutConfig)
    conventional_rabi_hz: Hz = Field(default=20e6, gt=0)
    conventional_s: Seconds = Field(default=1e-6, gt=0)


class TwoPhotonConfig(_Config):
    model: ModelConfig = Field(default_factory=ModelConfig)
    model_kind: Literal["full", "four_level"] = "full"
    detuning_hz: Hz = Field(
        default_factory=lambda: _constant_hz("two_photon_detuning"),
        description="Laser detuning below the |+-1> -> A2 lines.",
    )
    polarization: Polarization = "x"
    rabi_per_sqrt_w_hz: float = Field(
        default=5.9e10, gt=0, description="Drive Rabi amplitude per sqrt(W), in Hz."
    )
    powers_w: list[Watts] = Field(default_factory=lambda: [12e-6, 23e-6, 46e-6], min_length=1)
    times: TimeAxis = Field(default_factory=lambda: TimeAxis(stop_s=2e-6, points=201))
    detuning_uncertainty_hz: Hz = Field(
        default_factory=lambda: _constant_hz("detuning_uncertainty"), ge=0
    )
    jitter_samples: int = Field(default=200, ge=1)
    seed: int = 0
    envelope: Literal["auto", "exponential", "gaussian"] = "auto"
    pump: PumpStepsConfig = Field(default_factory=PumpStepsConfig)
    readout: ReadoutConfig = Field(default_factory=ReadoutConfig)

    @field_validator("powers_w")
    @classmethod
    def _powers(cls, value: list[float]) -> list[float]:
        if any(p <= 0 for p in value):
            raise ValueError("powers must be positive")
        return value

    def rabi(self, power_w: float) -> float:
        """Drive amplitude (rad/s) at a power, Omega = k sqrt(P)."""
        return to_angular(self.rabi_per_sqrt_w_hz) * float(np.sqrt(power_w))


class DarkMapConfig(_Config):
    zfs_hz: Hz = Field(default_factory=lambda: _constant_hz("zero_field_splitting"), gt=0)
    zeeman_hz: Hz = Field(default_factory=lambda: _constant_hz("dark_map_zeeman_splitting"), ge=0)
    omega_0_hz: Hz = Field(default=5e6, ge=0)
    omega_plus_hz: Hz = Field(default=5e6, ge=0)
    omega_minus_hz: Hz = Field(default=5e6, ge=0)
    detuning: FrequencyAxis = Field(
        default_factory=lambda: FrequencyAxis(start_hz=-60e6, stop_hz=60e6, points=61)
    )
    modulation_offset: FrequencyAxis = Field(
        default_factory=lambda: FrequencyAxis(start_hz=-30e6, stop_hz=30e6, points=61),
        description="Modulation frequency relative to zfs_hz.",
    )
    decay_rate_per_s: PerSecond | None = Field(default=None, ge=0)
    branching: tuple[float, float, float] | None = None
    ground_dephasing_per_s: PerSecond = Field(default=0.0, ge=0)
    ground_mixing_per_s: PerSecond = Field(default=0.0, ge=0)
    mode: Literal["steady_state", "time_resolved"] = "steady_state"
    pulse_s: Seconds = Field(default=50e-6, gt=0)
    dark_line_prominence: float = Field(default=0.05, gt=0, lt=1)

    def modulation_hz(self) -> NDArray[np.float64]:
        return self.zfs_hz + self.modulation_offset.values()

    def tripod_params(self, detuning_hz: float, modulation_hz: float) -> TripodParams:
        return TripodParams(
            detuning=to_angular(detuning_hz),
            zfs=to_angular(self.zfs_hz),
            modulation=to_angular(modulation_hz),
            zeeman_delta=to_angular(self.zeeman_hz),
            omega_0=to_angular(self.omega_0_hz),
            omega_plus=to_angular(self.omega_plus_hz),
            omega_minus=to_angular(self.omega_minus_hz),
        )

    def decay_params(self) -> DecayParams:
        default = DecayParams()
        rate = default.rate if self.decay_rate_per_s is None else self.decay_rate_per_s
        branching = dict(default.branching)
        if self.branching is not None:
            branching[StateLabel.A2] = self.branching
        return DecayParams(rate=rate, branching=branching)


# %% [markdown]
# ## Loading


# %%
RECIPES: dict[str, type[BaseModel]] = {
    "ple": PleConfig,
    "pump": PumpConfig,
    "rabi-mw": MicrowaveRabiConfig,
    "rabi-2photon": TwoPhotonConfig,
    "darkmap": DarkMapConfig,
    "simulate": SequenceFile,
}


def parse_model(cls: type[Model], data: object, source: str = "") -> Model:
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(validation_message(e, source), source=source) from e


def load_model_file(cls: type[Model], path: Path) -> Model:
    """Read and validate one JSON file; problems become path-annotated ConfigurationErrors."""
    return parse_model(cls, read_json(path), str(path))

