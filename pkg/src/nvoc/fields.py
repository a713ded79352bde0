"""Laser and microwave drives, and their compilation into rotating-frame segments.

Conventions:
    - A tone of Rabi amplitude Omega couples |g> -> |e> with the matrix element
      <e|H|g> = -(Omega/2) * exp(i phase) * (eps . d), so a resonant two-level drive
      oscillates at Omega.
    - Detunings are positive for a laser below its transition: tone frequency =
      transition frequency - detuning.
    - Each tone couples every dipole-allowed transition whose frequency lies within the
      cutoff of the tone. A carrier also couples its named transition and every
      transition within the cutoff of that named line, so a far-detuned carrier still
      drives the whole manifold it addresses. Whenever |+-1> -> A2 is coupled, the
      matching |+-1> -> A1 coupling is kept as well.
    - Frames: the levels connected by couplings form components; each component is
      rooted at its first excited level and every coupled level rotates with the tone
      that reaches it. Diagonal entries are energy - frame.
"""

# %% [markdown]
# ## Imports

# %%
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

from nvoc.config import settings
from nvoc.dynamics import CollapseChannel, Liouvillian, liouvillian
from nvoc.errors import CompilationError, ConfigurationError
from nvoc.levels import LevelModel, StateLabel
from nvoc.logger import setup_logging
from nvoc.utils import to_hz

if TYPE_CHECKING:
    from nvoc.schemas import SequenceFile

# %%
logger = setup_logging(__name__, settings.log_level)

_R2 = np.sqrt(2.0)

POLARIZATIONS: dict[str, tuple[complex, complex, complex]] = {
    "sigma+": (1, 0, 0),
    "sigma-": (0, 1, 0),
    "pi": (0, 0, 1),
    # Linear polarizations in the (sigma+, sigma-, pi) basis, up to a global phase.
    "x": (1 / _R2, 1 / _R2, 0),
    "y": (1j / _R2, -1j / _R2, 0),
}


def jones(polarization: str | Sequence[complex]) -> NDArray[np.complex128]:
    """Normalized Jones vector over (sigma+, sigma-, pi) from a name or components."""
    if isinstance(polarization, str):
        try:
            vector = np.array(POLARIZATIONS[polarization], dtype=complex)
        except KeyError as e:
            raise ConfigurationError(
                f"unknown polarization '{polarization}' (expected {', '.join(POLARIZATIONS)})"
            ) from e
    else:
        vector = np.asarray(polarization, dtype=complex)
    if vector.shape != (3,):
        raise ConfigurationError("a Jones vector has three components (sigma+, sigma-, pi)")
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ConfigurationError("polarization vector is zero")
    return vector / norm


# %% [markdown]
# ## Drive types


# %%
class Sideband(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    offset: float = Field(description="Frequency offset from the carrier (rad/s).")
    amplitude: float = Field(default=0.5, ge=0, description="Relative to the carrier.")
    phase: float = 0.0


class DriveField(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    transition: tuple[StateLabel, StateLabel]
    detuning: float = 0.0
    rabi: float = Field(ge=0)
    polarization: tuple[complex, complex, complex] = (1, 0, 0)
    sidebands: tuple[Sideband, ...] = ()

    @field_validator("polarization", mode="before")
    @classmethod
    def _normalize(cls, value: object) -> tuple[complex, complex, complex]:
        vector = jones(value)  # type: ignore[arg-type]
        return (complex(vector[0]), complex(vector[1]), complex(vector[2]))

    @field_validator("transition")
    @classmethod
    def _ground_to_excited(
        cls, value: tuple[StateLabel, StateLabel]
    ) -> tuple[StateLabel, StateLabel]:
        ground, excited = value
        if not ground.is_ground or excited.is_ground:
            raise ValueError(f"transition must be ground -> excited, got {ground} -> {excited}")
        return value


class MicrowaveDrive(BaseModel):
    """Microwave tone coupling |0> to both |+-1>; detuning refers to |0> -> target."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rabi: float = Field(ge=0)
    detuning: float = 0.0
    target: Literal["+1", "-1"] = "+1"


class PulseSegment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    duration: float = Field(gt=0)
    drives: tuple[DriveField, ...] = ()
    microwave: MicrowaveDrive | None = None
    channels: tuple[CollapseChannel, ...] = ()
    rise_time: float = Field(default=0.0, ge=0)
    label: str = ""


# %% [markdown]
# ## Tripod model
# Four levels (|0>, |+1>, |-1>, |A2>) driven by a carrier on |0> -> A2 and a sideband
# on |+-1> -> A2, written in the frame where A2 sits at zero.


# %%
class TripodParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    detuning: float = Field(description="One-photon detuning of the carrier (rad/s).")
    zfs: float = Field(gt=0, description="Ground zero-field splitting (rad/s).")
    modulation: float = Field(description="Sideband offset omega_mod (rad/s).")
    zeeman_delta: float = Field(default=0.0, ge=0)
    omega_0: complex = 0j
    omega_plus: complex = 0j
    omega_minus: complex = 0j

    @computed_field
    @property
    def detuning_prime(self) -> float:
        return self.detuning + self.zfs - self.modulation


def tripod_hamiltonian(p: TripodParams) -> NDArray[np.complex128]:
    """4x4 tripod Hamiltonian in the basis (|0>, |+1>, |-1>, |A2>)."""
    h = np.zeros((4, 4), dtype=complex)
    h[0, 0] = -p.detuning
    h[1, 1] = -(p.detuning_prime + p.zeeman_delta / 2)
    h[2, 2] = -(p.detuning_prime - p.zeeman_delta / 2)
    for k, omega in enumerate((p.omega_0, p.omega_plus, p.omega_minus)):
        h[3, k] = -omega
        h[k, 3] = -np.conj(omega)
    return h


# %% [markdown]
# ## Compilation


# %%
@dataclass(frozen=True)
class Coupling:
    tone: str
    ground: StateLabel
    excited: StateLabel
    frequency: float
    element: complex


@dataclass(frozen=True, eq=False)
class CompiledSegment:
    label: str
    duration: float
    labels: tuple[StateLabel, ...]
    hamiltonian: NDArray[np.complex128]
    drive_hamiltonian: NDArray[np.complex128] | None
    rise_time: float
    channels: tuple[CollapseChannel, ...]
    frames: NDArray[np.float64]
    couplings: tuple[Coupling, ...]

    def envelope(self, t: float) -> float:
        r, T = self.rise_time, self.duration
        if t < r:
            return float(np.sin(np.pi * t / (2 * r)) ** 2)
        if t > T - r:
            return float(np.sin(np.pi * max(T - t, 0.0) / (2 * r)) ** 2)
        return 1.0

    def liouvillian(self) -> Liouvillian:
        if self.drive_hamiltonian is None:
            return liouvillian(self.hamiltonian, self.channels)
        return liouvillian(
            self.hamiltonian, self.channels, [(self.drive_hamiltonian, self.envelope)]
        )

    def summary(self) -> str:
        lines = [f"segment '{self.label}': {self.duration:.6g} s, {len(self.channels)} channels"]
        for c in self.couplings:
            lines.append(
                f"  {c.tone}: {c.ground} -> {c.excited} at {to_hz(c.frequency):+.6e} Hz, "
                f"|element| = 2pi x {to_hz(abs(c.element)):.6g} Hz"
            )
        diag = ", ".join(
            f"{lab}={to_hz(h.real):+.6g}"
            for lab, h in zip(self.labels, np.diag(self.hamiltonian))
        )
        lines.append(f"  diagonal (Hz): {diag}")
        return "\n".join(lines)


@dataclass(frozen=True)
class _Tone:
    name: str
    frequency: float
    amplitude: complex
    polarization: NDArray[np.complex128]
    named: tuple[StateLabel, StateLabel] | None


def _tones(drive: DriveField, model: LevelModel, index: int) -> list[_Tone]:
    ground, excited = drive.transition
    if ground not in model.labels or excited not in model.labels:
        raise CompilationError(
            f"drive {index} names {ground} -> {excited}, which is not in the level model"
        )
    carrier = model.transition_frequency(ground, excited) - drive.detuning
    eps = np.array(drive.polarization, dtype=complex)
    tones = [_Tone(f"drive{index}", carrier, complex(drive.rabi), eps, drive.transition)]
    for k, sb in enumerate(drive.sidebands):
        if sb.amplitude == 0:
            continue
        tones.append(
            _Tone(
                f"drive{index}.sideband{k}",
                carrier + sb.offset,
                drive.rabi * sb.amplitude * np.exp(1j * sb.phase),
                eps,
                None,
            )
        )
    return tones


def _tone_couplings(tone: _Tone, model: LevelModel, cutoff: float) -> list[Coupling]:
    centres = [tone.frequency]
    if tone.named is not None:
        centres.append(model.transition_frequency(*tone.named))
    pairs = [
        (g, e)
        for g, e in model.pairs()
        if min(abs(model.transition_frequency(g, e) - c) for c in centres) <= cutoff
    ]
    if tone.named is not None and tone.named not in pairs:
        pairs.insert(0, tone.named)
    for g in (StateLabel.PLUS, StateLabel.MINUS):
        partner = (g, StateLabel.A1)
        if (g, StateLabel.A2) in pairs and partner not in pairs and partner[1] in model.labels:
            pairs.append(partner)

    couplings = []
    for g, e in pairs:
        overlap = complex(np.dot(tone.polarization, model.dipole(g, e)))
        if overlap == 0:
            if (g, e) == tone.named:
                raise CompilationError(
                    f"{tone.name}: polarization has no overlap with the named "
                    f"transition {g} -> {e}"
                )
            continue
        couplings.append(Coupling(tone.name, g, e, tone.frequency, -0.5 * tone.amplitude * overlap))
    return couplings


def _microwave_couplings(mw: MicrowaveDrive, model: LevelModel) -> list[Coupling]:
    zero, target = StateLabel.ZERO, StateLabel(mw.target)
    frequency = model.energy(target) - model.energy(zero) - mw.detuning
    return [
        Coupling("microwave", zero, level, frequency, complex(-0.5 * mw.rabi))
        for level in (StateLabel.PLUS, StateLabel.MINUS)
        if level in model.labels
    ]


def _frames(model: LevelModel, couplings: Sequence[Coupling]) -> NDArray[np.float64]:
    """Frame frequency of each level; raises on inconsistent coupling loops."""
    n = model.dim
    edges: dict[int, list[tuple[int, float, Coupling]]] = {i: [] for i in range(n)}
    for c in couplings:
        # frame[upper] = frame[lower] + frequency
        lower, upper = model.index(c.ground), model.index(c.excited)
        edges[lower].append((upper, c.frequency, c))
        edges[upper].append((lower, -c.frequency, c))

    frames = np.full(n, np.nan)
    source: dict[int, Coupling | None] = {}
    scale = max(1.0, float(np.abs(model.energies).max()))
    order = [model.index(lab) for lab in model.excited_labels] + [
        model.index(lab) for lab in model.ground_labels
    ]
    for root in order:
        if not np.isnan(frames[root]):
            continue
        frames[root] = model.energies[root]
        source[root] = None
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j, step, c in edges[i]:
                expected = frames[i] + step
                if np.isnan(frames[j]):
                    frames[j] = expected
                    source[j] = c
                    queue.append(j)
                elif abs(frames[j] - expected) > 1e-9 * scale:
                    other = source[j] or source[i]
                    other_desc = (
                        f"{other.tone} on {other.ground} -> {other.excited}"
                        if other
                        else "the frame root"
                    )
                    raise CompilationError(
                        f"conflicting frames: {c.tone} on {c.ground} -> {c.excited} and "
                        f"{other_desc} need different rotating frames for "
                        f"{model.labels[j]}",
                        mismatch_hz=to_hz(float(frames[j] - expected)),
                    )
    return frames


def _merge(couplings: list[Coupling]) -> list[Coupling]:
    merged: dict[tuple[StateLabel, StateLabel], Coupling] = {}
    for c in couplings:
        key = (c.ground, c.excited)
        if key not in merged:
            merged[key] = c
            continue
        prev = merged[key]
        if abs(prev.frequency - c.frequency) > 1e-9 * max(1.0, abs(c.frequency)):
            raise CompilationError(
                f"{prev.tone} and {c.tone} both couple {c.ground} -> {c.excited} at "
                "different frequencies; no single rotating frame exists",
                separation_hz=to_hz(c.frequency - prev.frequency),
            )
        merged[key] = Coupling(
            f"{prev.tone}+{c.tone}", c.ground, c.excited, c.frequency, prev.element + c.element
        )
    return list(merged.values())


def decay_channels(model: LevelModel) -> tuple[CollapseChannel, ...]:
    channels = []
    for e, rates in model.decay.items():
        for g, rate in rates.items():
            if rate > 0:
                channels.append(
                    CollapseChannel.decay(model.dim, model.index(e), model.index(g), rate)
                )
    return tuple(channels)


def compile_segment(
    segment: PulseSegment, model: LevelModel, cutoff: float | None = None
) -> CompiledSegment:
    cutoff = settings.coupling_cutoff if cutoff is None else cutoff
    couplings: list[Coupling] = []
    for i, drive in enumerate(segment.drives):
        for tone in _tones(drive, model, i):
            found = _tone_couplings(tone, model, cutoff)
            if not found:
                logger.info(
                    f"Dropped {tone.name} at {to_hz(tone.frequency):+.6e} Hz: "
                    "no transition within the cutoff"
                )
            couplings.extend(found)
    if segment.microwave is not None and segment.microwave.rabi > 0:
        couplings.extend(_microwave_couplings(segment.microwave, model))
    couplings = _merge(couplings)
    frames = _frames(model, couplings)

    n = model.dim
    drive_h = np.zeros((n, n), dtype=complex)
    for c in couplings:
        i, j = model.index(c.excited), model.index(c.ground)
        drive_h[i, j] += c.element
        drive_h[j, i] += np.conj(c.element)
    static = np.diag(model.energies - frames).astype(complex)
    for ch in segment.channels:
        if ch.operator.shape != (n, n):
            raise ConfigurationError(
                f"segment channel has shape {ch.operator.shape}, level model has {n} levels"
            )
    if segment.rise_time > 0 and 2 * segment.rise_time > segment.duration:
        raise ConfigurationError("rise_time must be at most half the segment duration")
    smooth = segment.rise_time > 0 and bool(couplings)
    logger.debug(f"Compiled segment '{segment.label}' with {len(couplings)} couplings")
    return CompiledSegment(
        label=segment.label,
        duration=segment.duration,
        labels=model.labels,
        hamiltonian=static if smooth else static + drive_h,
        drive_hamiltonian=drive_h if smooth else None,
        rise_time=segment.rise_time,
        channels=decay_channels(model) + tuple(segment.channels),
        frames=frames,
        couplings=tuple(couplings),
    )


def compile_sequence(
    sequence: Sequence[PulseSegment], model: LevelModel, cutoff: float | None = None
) -> list[CompiledSegment]:
    """Compile each segment into (rotating-frame Hamiltonian, channels, duration).

    Raises:
        CompilationError: a drive names a missing transition, its polarization does not
            reach the named transition, or two couplings need different frames.
    """
    return [compile_segment(segment, model, cutoff) for segment in sequence]


# %%
def load_sequence(path: str | Path) -> tuple[LevelModel, list[PulseSegment], "SequenceFile"]:
    """Read a versioned sequence file; returns (level model, segments, parsed file)."""
    from nvoc.schemas import SequenceFile, load_model_file

    parsed = load_model_file(SequenceFile, Path(path))
    model = parsed.model.level_model()
    return model, parsed.segments_for(model), parsed
