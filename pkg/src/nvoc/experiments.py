"""Experiment recipes: PLE scans, optical pumping, pi-pulse readout, microwave and
two-photon Rabi oscillations, and the double-dark-resonance map.

Each recipe takes a validated config from `nvoc.schemas` and returns a `ScanResult`
(`run_optical_pumping` returns a `PumpingResult`). Results are in file units:
frequencies in Hz, durations in seconds, powers in watts. Scan points run in worker
processes and are assembled by index, so the worker count never changes a result.
"""

# %% [markdown]
# ## Imports

# %%
import io
import json
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache, partial
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from nvoc.analytics import (
    TwoPhotonParams,
    adiabaticity_check,
    dark_line_positions,
    two_photon_decay,
    two_photon_rabi,
    two_photon_rabi_single,
)
from nvoc.config import TOOL_VERSION, load_constants, settings
from nvoc.dynamics import (
    CollapseChannel,
    DensityMatrix,
    Trajectory,
    collection_efficiency,
    emission_functional,
    evolve,
    liouvillian,
    photon_functional,
    propagate,
    segment_operators,
    steady_state,
)
from nvoc.errors import ConfigurationError, NumericalError
from nvoc.fields import (
    CompiledSegment,
    DriveField,
    PulseSegment,
    compile_segment,
    compile_sequence,
    jones,
    tripod_hamiltonian,
)
from nvoc.fitting import (
    find_spectral_minima,
    find_spectral_peaks,
    fit_damped_cosine,
    fit_line_through_origin,
)
from nvoc.levels import (
    ALL_LABELS,
    LevelModel,
    StateLabel,
    nv_level_model,
    transition_table,
)
from nvoc.logger import setup_logging
from nvoc.schemas import (
    DarkMapConfig,
    MicrowaveRabiConfig,
    ModelConfig,
    PleConfig,
    PumpConfig,
    PumpStepsConfig,
    ReadoutConfig,
    TwoPhotonConfig,
)
from nvoc.utils import jsonable, point_rng, to_angular, to_hz

# %%
logger = setup_logging(__name__, settings.log_level)

POPULATION_TOL = 1e-6
LINE_TOLERANCE = 2 * np.pi * 1e3  # rad/s, lines closer than this are one line

T = TypeVar("T")
R = TypeVar("R")

PLUS, MINUS, ZERO = StateLabel.PLUS, StateLabel.MINUS, StateLabel.ZERO
A1, A2 = StateLabel.A1, StateLabel.A2


# %% [markdown]
# ## Results


# %%
@dataclass(frozen=True, eq=False)
class Axis:
    name: str
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ConfigurationError(f"axis '{self.name}' must be a non-empty 1-D array")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Observables on the grid spanned by `axes`, plus fits and provenance.

    Observables have shape `tuple(len(axis) for axis in axes)`; the ones named in
    `population_keys` must lie in [0, 1] within `POPULATION_TOL`.
    """

    recipe: str
    axes: tuple[Axis, ...]
    observables: dict[str, NDArray[np.float64]]
    fits: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    population_keys: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        shape = self.shape
        observables = {}
        for name, values in self.observables.items():
            array = np.asarray(values, dtype=float)
            if array.shape != shape:
                raise ConfigurationError(
                    f"observable '{name}' has shape {array.shape}, axes give {shape}"
                )
            observables[name] = array
        object.__setattr__(self, "observables", observables)
        for name in self.population_keys:
            array = observables[name]
            if array.min() < -POPULATION_TOL or array.max() > 1 + POPULATION_TOL:
                raise NumericalError(
                    f"population '{name}' left [0, 1]",
                    minimum=float(array.min()),
                    maximum=float(array.max()),
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(axis.values.size for axis in self.axes)

    def with_provenance(self, **entries: Any) -> "ScanResult":
        return replace(self, provenance={**self.provenance, **entries})

    def columns(self) -> list[str]:
        return [axis.name for axis in self.axes] + list(self.observables)

    def to_csv(self) -> str:
        """One row per grid point: axis values, then observables (C order)."""
        grids = np.meshgrid(*(axis.values for axis in self.axes), indexing="ij")
        data = [g.reshape(-1) for g in grids]
        data += [values.reshape(-1) for values in self.observables.values()]
        buffer = io.StringIO()
        np.savetxt(
            buffer,
            np.column_stack(data),
            delimiter=",",
            header=",".join(self.columns()),
            comments="",
            fmt="%.17g",
        )
        return buffer.getvalue()

    def fits_json(self) -> str:
        return json.dumps(jsonable(self.fits), indent=2, sort_keys=True) + "\n"


def _provenance(**extra: Any) -> dict[str, Any]:
    return {
        "constants_version": load_constants().version,
        "tool_version": TOOL_VERSION,
        **extra,
    }


# %% [markdown]
# ## Execution helpers


# %%
def parallel_map(
    func: Callable[[T], R], tasks: Iterable[T], workers: int | None = None
) -> list[R]:
    """Ordered map over worker processes; runs inline for one worker or one task."""
    tasks = list(tasks)
    workers = settings.workers if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    workers = min(workers, len(tasks))
    logger.debug(f"Running {len(tasks)} tasks on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


@lru_cache(maxsize=1)
def default_level_model() -> LevelModel:
    """Nine-level model at the calibrated strain with the packaged constants."""
    return ModelConfig().level_model()


def mixed_ground(model: LevelModel) -> DensityMatrix:
    return DensityMatrix.from_populations([1.0 if lab.is_ground else 0.0 for lab in model.labels])


def run_sequence(
    rho0: DensityMatrix, compiled: Sequence[CompiledSegment], samples: int = 101
) -> Trajectory:
    """Run segments back to back; one trajectory with `samples` points per segment.

    Segments with smooth edges are integrated, the rest propagated exactly. The state
    is handed from one segment to the next unchanged, in the frame of the segment that
    produced it.
    """
    if not compiled:
        raise ConfigurationError("sequence has no segments")
    labels = tuple(str(lab) for lab in compiled[0].labels)
    times, states = [], []
    offset, rho = 0.0, rho0
    for k, segment in enumerate(compiled):
        L = segment.liouvillian()
        local = np.linspace(0.0, segment.duration, max(samples, 2))
        if L.time_dependent:
            trajectory = evolve(rho, L, segment.duration, samples=local, labels=labels)
        else:
            trajectory = propagate(rho, L, local, labels)
        skip = 0 if k == 0 else 1
        times.append(trajectory.times[skip:] + offset)
        states.append(trajectory.states[skip:])
        offset += segment.duration
        rho = trajectory.final
    return Trajectory(np.concatenate(times), np.concatenate(states), labels)


def final_state(rho0: DensityMatrix, compiled: Sequence[CompiledSegment]) -> DensityMatrix:
    return run_sequence(rho0, compiled, samples=2).final


# %% [markdown]
# ## Readout
# A readout is a linear functional on vec(rho): photons collected over its segments
# from any state, so one readout prices a whole stack of states at once.


# %%
@dataclass(frozen=True, eq=False)
class Readout:
    functional: NDArray[np.complex128]
    ground: StateLabel
    duration: float

    def photons(self, states: DensityMatrix | NDArray[np.complex128]) -> Any:
        """Photons for one state (float) or a stack of shape (..., n, n) (array)."""
        matrix = states.matrix if isinstance(states, DensityMatrix) else np.asarray(states)
        flat = matrix.reshape(*matrix.shape[:-2], -1)
        out = np.real(flat @ self.functional)
        return float(out) if out.ndim == 0 else out


def sequence_functional(
    model: LevelModel,
    compiled: Sequence[CompiledSegment],
    efficiency: float | None = None,
) -> NDArray[np.complex128]:
    """Row vector w with photons = Re(w . vec(rho0)) over the whole sequence."""
    rates = emission_functional(model.emission_rates())
    eff = collection_efficiency(efficiency)
    d = model.dim**2
    w = np.zeros(d, dtype=complex)
    carried = np.eye(d, dtype=complex)
    for segment in compiled:
        L = segment.liouvillian()
        if L.time_dependent:
            raise ConfigurationError("readout segments must have sharp edges")
        step, integral = segment_operators(L, segment.duration)
        w = w + eff * (rates @ integral @ carried)
        carried = step @ carried
    return w


def pi_pulse_readout(
    model: LevelModel,
    rabi: float,
    polarization: str | Sequence[complex] = "sigma-",
    collection: float = 100e-9,
    cutoff: float | None = None,
) -> Readout:
    """Optical pi pulse on |g> -> A2 plus a dark collection window.

    The ground level is the one of |+-1> the polarization reaches best (|+1> on a tie).
    The pulse lasts pi / (rabi |eps . d|).
    """
    eps = jones(polarization)
    overlaps = {
        g: abs(complex(eps @ model.dipole(g, A2))) for g in (PLUS, MINUS) if g in model.labels
    }
    if not overlaps or max(overlaps.values()) == 0:
        raise ConfigurationError("readout polarization reaches no |+-1> -> A2 transition")
    ground = max(overlaps, key=lambda g: overlaps[g])
    duration = np.pi / (rabi * overlaps[ground])
    segments = [
        PulseSegment(
            duration=duration,
            drives=(DriveField(transition=(ground, A2), rabi=rabi, polarization=eps),),
            label="readout pi pulse",
        )
    ]
    if collection > 0:
        segments.append(PulseSegment(duration=collection, label="collection"))
    compiled = compile_sequence(segments, model, cutoff)
    return Readout(sequence_functional(model, compiled), ground, duration)


def conventional_readout(model: LevelModel, rabi: float, duration: float) -> Readout:
    """Resonant |0> -> Ex excitation with photons collected during the pulse."""
    segment = PulseSegment(
        duration=duration,
        drives=(DriveField(transition=(ZERO, StateLabel.EX), rabi=rabi, polarization="x"),),
        label="Ex readout",
    )
    compiled = compile_segment(segment, model)
    return Readout(sequence_functional(model, [compiled]), ZERO, duration)


def run_pi_pulse_readout(
    rho: DensityMatrix,
    polarization: str | Sequence[complex] | None = None,
    model: LevelModel | None = None,
    readout: ReadoutConfig | None = None,
) -> float:
    """Photons collected by an A2 pi-pulse readout of `rho`."""
    model = model or default_level_model()
    readout = readout or ReadoutConfig()
    polarization = readout.polarization if polarization is None else polarization
    return pi_pulse_readout(
        model, to_angular(readout.rabi_hz), polarization, readout.collection_s
    ).photons(rho)


# %% [markdown]
# ## Optical pumping
# Step 1 empties |0> through Ex; step 2 drives |+-1> -> A2 with the polarization whose
# dark state is the target, so population collects there.


# %%
def step2_polarization(
    target: NDArray[np.complex128], extinction: float = 0.0
) -> NDArray[np.complex128]:
    """Polarization leaving `target` = (t+, t-) dark on |+-1> -> A2.

    An extinction ratio e (intensity) mixes in the orthogonal polarization with
    amplitude sqrt(e).
    """
    t_plus, t_minus = target
    eps = np.array([-t_plus, t_minus, 0.0], dtype=complex)
    eps = eps / np.linalg.norm(eps)
    if extinction > 0:
        perp = np.array([-np.conj(eps[1]), np.conj(eps[0]), 0.0], dtype=complex)
        eps = np.sqrt(1 - extinction) * eps + np.sqrt(extinction) * perp
    return eps


def pump_segments(
    target: NDArray[np.complex128],
    steps: PumpStepsConfig,
    extinction: float = 0.0,
    include_step2: bool = True,
) -> list[PulseSegment]:
    segments = [
        PulseSegment(
            duration=steps.step1_duration_s,
            drives=(
                DriveField(
                    transition=(ZERO, StateLabel.EX),
                    rabi=to_angular(steps.step1_rabi_hz),
                    polarization="x",
                ),
            ),
            label="pump 0 -> Ex",
        )
    ]
    if include_step2:
        eps = step2_polarization(target, extinction)
        named = (PLUS, A2) if eps[1] != 0 else (MINUS, A2)
        segments.append(
            PulseSegment(
                duration=steps.step2_duration_s,
                drives=(
                    DriveField(
                        transition=named,
                        rabi=to_angular(steps.step2_rabi_hz),
                        polarization=tuple(eps),
                    ),
                ),
                label="pump +-1 -> A2",
            )
        )
    if steps.settle_s > 0:
        segments.append(PulseSegment(duration=steps.settle_s, label="settle"))
    return segments


def target_state(model: LevelModel, target: NDArray[np.complex128]) -> NDArray[np.complex128]:
    v = np.zeros(model.dim, dtype=complex)
    v[model.index(PLUS)], v[model.index(MINUS)] = target
    return v


@dataclass(frozen=True, eq=False)
class PumpingResult:
    target: NDArray[np.complex128]
    state: DensityMatrix
    fidelity: float
    labels: tuple[StateLabel, ...]
    ideal_fidelity: float | None = None
    attribution: dict[str, float] = field(default_factory=dict)
    readout_photons: float | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def populations(self) -> NDArray[np.float64]:
        return self.state.populations

    def to_scan_result(self) -> ScanResult:
        fits = {
            "labels": [str(lab) for lab in self.labels],
            "target": self.target,
            "fidelity": self.fidelity,
            "ideal_fidelity": self.ideal_fidelity,
            "attribution": self.attribution,
            "readout_photons": self.readout_photons,
        }
        return ScanResult(
            recipe="pump",
            axes=(Axis("level_index", np.arange(len(self.labels), dtype=float)),),
            observables={"population": self.populations},
            fits=fits,
            provenance=self.provenance,
            population_keys=("population",),
        )


IMPERFECTIONS = ("off_resonant", "decay_to_zero", "imperfect_selection")


def _pump_model(
    config: PumpConfig, decay_to_zero: bool, imperfect_selection: bool
) -> LevelModel:
    decay = config.model.decay_params()
    if not decay_to_zero:
        decay = decay.without_decay_to_zero()
    return config.model.level_model(decay, pure_selection=not imperfect_selection)


def _pump_variant(config: PumpConfig, flags: tuple[bool, bool, bool]) -> NDArray[np.complex128]:
    off_resonant, decay_to_zero, imperfect_selection = flags
    model = _pump_model(config, decay_to_zero, imperfect_selection)
    extinction = config.polarization_extinction if imperfect_selection else 0.0
    segments = pump_segments(config.target_vector(), config.steps, extinction)
    compiled = compile_sequence(segments, model, cutoff=np.inf if off_resonant else 0.0)
    return final_state(mixed_ground(model), compiled).matrix


def _fidelity(matrix: NDArray[np.complex128], target: NDArray[np.complex128]) -> float:
    return float(np.real(target.conj() @ matrix @ target))


def run_optical_pumping(config: PumpConfig, workers: int | None = None) -> PumpingResult:
    """Two-step pumping from the mixed ground state into the configured target.

    Each imperfection is a toggle: off-resonant excitation (every transition coupled,
    else only the named line and its degenerate partners), decay from the |+-1>
    manifold into |0>, and imperfect selection (strain-mixed dipoles plus a finite
    polarization extinction). The attribution of an imperfection is the fidelity it
    costs when enabled alone on top of the ideal recipe.
    """
    configured = (config.off_resonant, config.decay_to_zero, config.imperfect_selection)
    variants: dict[str, tuple[bool, bool, bool]] = {"configured": configured}
    if config.attribution:
        variants["ideal"] = (False, False, False)
        for k, name in enumerate(IMPERFECTIONS):
            variants[name] = tuple(i == k for i in range(3))  # type: ignore[assignment]
    matrices = dict(
        zip(variants, parallel_map(partial(_pump_variant, config), variants.values(), workers))
    )

    model = _pump_model(config, config.decay_to_zero, config.imperfect_selection)
    target = target_state(model, config.target_vector())
    state = DensityMatrix(matrices["configured"])
    fidelity = _fidelity(state.matrix, target)
    ideal, attribution = None, {}
    if config.attribution:
        ideal = _fidelity(matrices["ideal"], target)
        attribution = {
            name: ideal - _fidelity(matrices[name], target) for name in IMPERFECTIONS
        }
    photons = None
    if config.readout is not None:
        photons = run_pi_pulse_readout(state, model=model, readout=config.readout)
    logger.info(f"Pumping into target {config.target}: fidelity {fidelity:.4f}")
    return PumpingResult(
        target=target,
        state=state,
        fidelity=fidelity,
        labels=model.labels,
        ideal_fidelity=ideal,
        attribution=attribution,
        readout_photons=photons,
        provenance=_provenance(),
    )


# %% [markdown]
# ## Microwave Rabi oscillations


# %%
def _contrast(y: NDArray[np.float64]) -> float:
    top = float(y.max())
    return (top - float(y.min())) / top if top > 0 else float("nan")


def _fit_entry(fit: Any, halve: bool = False) -> dict[str, Any]:
    scale = 0.5 if halve else 1.0
    return {
        "frequency_hz": to_hz(fit.frequency) * scale,
        "frequency_error_hz": to_hz(fit.errors.get("frequency", float("nan"))) * scale,
        "decay_hz": to_hz(fit.decay) * scale,
        "decay_error_hz": to_hz(fit.errors.get("decay", float("nan"))) * scale,
        "amplitude": fit.amplitude,
        "offset": fit.offset,
        "envelope": fit.envelope,
        "r_squared": fit.r_squared,
        "ok": fit.ok,
        "message": fit.message,
    }


def run_microwave_rabi(config: MicrowaveRabiConfig) -> ScanResult:
    """Microwave Rabi oscillation read out through A2 and through Ex.

    The A2 pi-pulse readout follows the |+-1> population picked by its polarization and
    the Ex readout follows |0>, so the two traces oscillate out of phase.
    """
    model = config.model.level_model()
    times = config.durations.values()
    segment = PulseSegment(
        duration=float(times[-1]), microwave=config.microwave.drive(), label="microwave"
    )
    compiled = compile_segment(segment, model)
    rho0 = DensityMatrix.basis(model.dim, model.index(config.initial))
    labels = tuple(str(lab) for lab in model.labels)
    trajectory = propagate(rho0, compiled.liouvillian(), times, labels)

    a2 = pi_pulse_readout(
        model,
        to_angular(config.readout.rabi_hz),
        config.readout.polarization,
        config.readout.collection_s,
    )
    ex = conventional_readout(
        model, to_angular(config.conventional_rabi_hz), config.conventional_s
    )
    a2_counts = a2.photons(trajectory.states)
    ex_counts = ex.photons(trajectory.states)
    correlation = float(np.corrcoef(a2_counts, ex_counts)[0, 1])
    populations = trajectory.populations

    fits = {
        "readout_ground": str(a2.ground),
        "pi_duration_s": a2.duration,
        "contrast_a2": _contrast(a2_counts),
        "contrast_ex": _contrast(ex_counts),
        "correlation": correlation,
        "fit_a2": _fit_entry(fit_damped_cosine(times, a2_counts)),
        "fit_ex": _fit_entry(fit_damped_cosine(times, ex_counts)),
    }
    logger.info(
        f"Microwave Rabi: A2 contrast {fits['contrast_a2']:.3f}, "
        f"correlation with Ex readout {correlation:+.3f}"
    )
    return ScanResult(
        recipe="rabi-mw",
        axes=(Axis("time_s", times),),
        observables={
            "readout_a2": a2_counts,
            "readout_ex": ex_counts,
            "population_0": populations[:, model.index(ZERO)],
            "population_plus": populations[:, model.index(PLUS)],
            "population_minus": populations[:, model.index(MINUS)],
        },
        fits=fits,
        provenance=_provenance(),
        population_keys=("population_0", "population_plus", "population_minus"),
    )


# %% [markdown]
# ## Photoluminescence excitation


# %%
def nearest_line(
    model: LevelModel, eps: NDArray[np.complex128], frequency: float
) -> tuple[StateLabel, StateLabel]:
    """Closest transition the polarization reaches."""
    reachable = [(g, e) for g, e in model.pairs() if complex(eps @ model.dipole(g, e)) != 0]
    if not reachable:
        raise ConfigurationError("polarization reaches no optical transition")
    return min(reachable, key=lambda p: abs(model.transition_frequency(*p) - frequency))


@dataclass(frozen=True, eq=False)
class _PleSetup:
    model: LevelModel
    mode: str
    rabi: float
    channels: tuple[CollapseChannel, ...]
    initial: DensityMatrix
    dwell: float


def _ple_point(
    setup: _PleSetup,
    eps: NDArray[np.complex128],
    named: tuple[StateLabel, StateLabel],
    nu: float,
    cutoff: float | None = None,
) -> float:
    model = setup.model
    drive = DriveField(
        transition=named,
        detuning=model.transition_frequency(*named) - nu,
        rabi=setup.rabi,
        polarization=tuple(eps),
    )
    segment = PulseSegment(
        duration=setup.dwell, drives=(drive,), channels=setup.channels, label="ple"
    )
    L = compile_segment(segment, model, cutoff).liouvillian()
    if setup.mode == "steady_state":
        state = steady_state(L).state
        return collection_efficiency() * float(model.emission_rates() @ state.populations)
    w = photon_functional(L, setup.dwell, model.emission_rates())
    return float(np.real(w @ setup.initial.vec()))


def _ple_trace(
    setup: _PleSetup, task: tuple[NDArray[np.complex128], NDArray[np.float64]]
) -> NDArray[np.float64]:
    eps, frequencies = task
    named = [nearest_line(setup.model, eps, nu) for nu in frequencies]
    return np.array([_ple_point(setup, eps, n, nu) for n, nu in zip(named, frequencies)])


def _line_trace(
    setup: _PleSetup,
    task: tuple[NDArray[np.complex128], tuple[StateLabel, StateLabel], NDArray[np.float64]],
) -> NDArray[np.float64]:
    eps, named, frequencies = task
    return np.array([_ple_point(setup, eps, named, nu, cutoff=0.0) for nu in frequencies])


def refine_lines(
    setup: _PleSetup,
    polarizations: Sequence[NDArray[np.complex128]],
    lines_hz: NDArray[np.float64],
    span_hz: float,
    points_per_side: int,
    workers: int | None = None,
) -> list[float | None]:
    """Peak of each line re-scanned on a fine grid with the laser coupled to that line only.

    The window runs `span_hz` either side of the line. A line whose fine trace has no
    interior maximum gets None; so does a line no polarization reaches in the model.
    """
    offsets = to_angular(span_hz) * np.arange(-points_per_side, points_per_side + 1)
    offsets /= points_per_side
    tasks, owners = [], []
    for i, line in enumerate(to_angular(lines_hz)):
        for eps in polarizations:
            named = nearest_line(setup.model, eps, line)
            if abs(setup.model.transition_frequency(*named) - line) <= LINE_TOLERANCE:
                tasks.append((eps, named, line + offsets))
                owners.append(i)
    traces = parallel_map(partial(_line_trace, setup), tasks, workers)
    summed = np.zeros((lines_hz.size, offsets.size))
    for i, trace in zip(owners, traces):
        summed[i] += trace
    peaks: list[float | None] = []
    for line, trace in zip(lines_hz, summed):
        k = int(np.argmax(trace))
        interior = 0 < k < trace.size - 1 and trace[k] > max(trace[0], trace[-1])
        peaks.append(float(line + to_hz(offsets[k])) if interior else None)
    return peaks


def ple_axis(config: PleConfig, lines_hz: NDArray[np.float64]) -> NDArray[np.float64]:
    if config.laser is not None:
        return config.laser.values()
    start = float(lines_hz.min()) - config.margin_hz
    stop = float(lines_hz.max()) + config.margin_hz
    points = int(np.ceil((stop - start) / config.step_hz)) + 1
    return np.linspace(start, stop, points)


def run_ple_scan(config: PleConfig, workers: int | None = None) -> ScanResult:
    """Fluorescence against laser frequency.

    In `steady_state` mode the observable is the stationary photon rate with the
    microwave acting as incoherent |0> <-> |+-1> mixing; in `integrated` mode it is the
    photon number over `dwell_s` from the configured initial populations. At each
    frequency the laser is named after the closest line its polarization reaches. An
    unpolarized scan averages x and y.

    A line counts as resolved when the coarse scan has a peak within one step of it or
    when `refine_lines` finds its peak within one fine step. Lines left over are
    reported in `unmatched_lines_hz`.
    """
    ground, excited = config.model.ground_params(), config.model.excited_params()
    model = nv_level_model(
        ground, excited, config.model.decay_params(), pure_selection=config.model.pure_selection
    )
    table = transition_table(ground, excited)
    laser_hz = ple_axis(config, to_hz(table.lines()))
    names = ["x", "y"] if config.polarization == "unpolarized" else [config.polarization]
    polarizations = [jones(p) for p in names]  # type: ignore[arg-type]

    channels: list[CollapseChannel] = []
    if config.microwave_mixing_per_s > 0:
        for level in (PLUS, MINUS):
            channels.extend(
                CollapseChannel.mixing(
                    model.dim,
                    model.index(ZERO),
                    model.index(level),
                    config.microwave_mixing_per_s,
                )
            )
    elif config.mode == "steady_state":
        logger.warning("Steady-state PLE without microwave mixing traps population in dark spins")
    populations = np.zeros(model.dim)
    for label, value in config.initial.items():
        populations[model.index(label)] = value
    setup = _PleSetup(
        model=model,
        mode=config.mode,
        rabi=to_angular(config.rabi_hz),
        channels=tuple(channels),
        initial=DensityMatrix.from_populations(populations),
        dwell=config.dwell_s,
    )

    laser = to_angular(laser_hz)
    pool_size = settings.workers if workers is None else workers
    traces = []
    for eps in polarizations:
        if config.rabi_hz == 0:
            traces.append(np.zeros(laser.size))
            continue
        chunks = np.array_split(laser, max(1, min(laser.size, 4 * pool_size)))
        parts = parallel_map(partial(_ple_trace, setup), [(eps, c) for c in chunks], workers)
        traces.append(np.concatenate(parts))
    fluorescence = np.mean(traces, axis=0)

    step = float(laser_hz[1] - laser_hz[0]) if laser_hz.size > 1 else 0.0
    peaks = find_spectral_peaks(laser_hz, fluorescence, config.peak_prominence)
    reachable = np.unique(np.concatenate([to_hz(table.lines(eps)) for eps in polarizations]))
    matched = np.array(
        [peaks.size > 0 and np.min(np.abs(peaks - f)) <= step for f in reachable], dtype=bool
    )
    refined: list[float | None] = [None] * reachable.size
    fine_step = config.refine_span_hz / max(config.refine_points_per_side, 1)
    if config.refine_points_per_side > 0 and config.rabi_hz > 0:
        refined = refine_lines(
            setup,
            polarizations,
            reachable,
            config.refine_span_hz,
            config.refine_points_per_side,
            workers,
        )
        for i, (line, peak) in enumerate(zip(reachable, refined)):
            matched[i] |= peak is not None and abs(peak - line) <= fine_step
    unmatched = [float(f) for f, ok in zip(reachable, matched) if not ok]
    observables = {"fluorescence": fluorescence}
    if len(names) > 1:
        observables |= {f"fluorescence_{n}": t for n, t in zip(names, traces)}
    logger.info(
        f"PLE scan: {peaks.size} peaks, {reachable.size - len(unmatched)} of "
        f"{reachable.size} lines resolved"
    )
    if unmatched:
        logger.warning(f"PLE lines without a peak (Hz): {unmatched}")
    return ScanResult(
        recipe="ple",
        axes=(Axis("laser_hz", laser_hz),),
        observables=observables,
        fits={
            "peaks_hz": peaks,
            "lines_hz": reachable,
            "line_peaks_hz": refined,
            "unmatched_lines_hz": unmatched,
            "step_hz": step,
            "fine_step_hz": fine_step,
        },
        provenance=_provenance(),
    )


# %% [markdown]
# ## Two-photon Rabi oscillations
# The drive sits `detuning_hz` below |+-1> -> A2. Static optical detuning jitter is
# averaged over Latin-hypercube Gaussian samples, drawn once and shared by every power;
# population oscillates at 2|Omega'| and its envelope decays at 2 Gamma, so fitted
# values are halved.


# %%
def jitter_offsets(rng: np.random.Generator, samples: int, sigma: float) -> NDArray[np.float64]:
    """One-dimensional Latin-hypercube draw from N(0, sigma^2)."""
    if sigma == 0 or samples == 1:
        return np.zeros(samples)
    strata = (np.arange(samples) + rng.random(samples)) / samples
    return sigma * norm.ppf(strata)


@dataclass(frozen=True, eq=False)
class _TwoPhotonSetup:
    model: LevelModel
    named: tuple[StateLabel, StateLabel]
    polarization: NDArray[np.complex128]
    detuning: float
    sigma: float
    ground_sigma: float
    offsets: NDArray[np.float64]
    ground_offsets: NDArray[np.float64]
    times: NDArray[np.float64]
    initial: DensityMatrix
    readout: Readout
    reference_counts: float


def _two_photon_trace(
    setup: _TwoPhotonSetup, rabi: float
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    duration = float(setup.times[-1])
    signal = np.zeros(setup.times.size)
    plus = np.zeros(setup.times.size)
    minus = np.zeros(setup.times.size)
    for y, yg in zip(setup.offsets, setup.ground_offsets):
        model = setup.model if yg == 0 else setup.model.shifted({PLUS: yg, MINUS: -yg})
        drive = DriveField(
            transition=setup.named,
            detuning=setup.detuning + y,
            rabi=rabi,
            polarization=tuple(setup.polarization),
        )
        segment = PulseSegment(duration=duration, drives=(drive,), label="two-photon")
        L = compile_segment(segment, model).liouvillian()
        trajectory = propagate(setup.initial, L, setup.times)
        signal += setup.readout.photons(trajectory.states) / setup.reference_counts
        populations = trajectory.populations
        plus += populations[:, model.index(PLUS)]
        minus += populations[:, model.index(MINUS)]
    n = setup.offsets.size
    return signal / n, plus / n, minus / n


def _line_summary(powers: NDArray, values: NDArray, ok: NDArray) -> dict[str, Any] | None:
    if np.count_nonzero(ok) < 2:
        return None
    line = fit_line_through_origin(powers[ok], values[ok])
    return line.as_dict()


def run_two_photon_rabi(config: TwoPhotonConfig, workers: int | None = None) -> ScanResult:
    """Two-photon Rabi oscillations between |-1> and |+1> at each drive power.

    The signal is the A2 pi-pulse readout normalized to the readout after the reference
    sequence, which leaves |+1> and |-1> equally populated. In the `full` model the
    initial state comes from the two-step pumping and the reference from step 1 alone;
    the `four_level` model starts in |-1> with the reference (|+1><+1| + |-1><-1|)/2.
    """
    ground, excited = config.model.ground_params(), config.model.excited_params()
    decay = config.model.decay_params()
    if config.model_kind == "four_level":
        model = nv_level_model(ground, excited, decay, pure_selection=True).subspace(
            [PLUS, MINUS, A1, A2]
        )
        initial = DensityMatrix.basis(model.dim, model.index(MINUS))
        half = np.zeros(model.dim)
        half[[model.index(PLUS), model.index(MINUS)]] = 0.5
        reference = DensityMatrix.from_populations(half)
    else:
        model = nv_level_model(ground, excited, decay, pure_selection=config.model.pure_selection)
        minus_target = np.array([0, 1], dtype=complex)
        start = mixed_ground(model)
        initial = final_state(
            start, compile_sequence(pump_segments(minus_target, config.pump), model)
        )
        step1 = pump_segments(minus_target, config.pump, include_step2=False)
        reference = final_state(start, compile_sequence(step1, model))

    readout = pi_pulse_readout(
        model,
        to_angular(config.readout.rabi_hz),
        config.readout.polarization,
        config.readout.collection_s,
    )
    reference_counts = readout.photons(reference)
    if reference_counts <= 0:
        raise NumericalError("reference readout collected no photons")

    eps = jones(config.polarization)
    overlap_plus = abs(complex(eps @ model.dipole(PLUS, A2)))
    overlap_minus = abs(complex(eps @ model.dipole(MINUS, A2)))
    if overlap_plus == 0 or overlap_minus == 0:
        raise ConfigurationError("two-photon drive must reach both |+1> -> A2 and |-1> -> A2")
    times = config.times.values()
    powers = np.asarray(config.powers_w, dtype=float)
    rabis = [config.rabi(p) for p in powers]
    sigma = to_angular(config.detuning_uncertainty_hz)
    rng = point_rng(config.seed, 0)
    offsets = jitter_offsets(rng, config.jitter_samples, sigma)
    ground_offsets = rng.permutation(
        jitter_offsets(rng, config.jitter_samples, ground.detuning_spread)
    )
    setup = _TwoPhotonSetup(
        model=model,
        named=(PLUS, A2),
        polarization=eps,
        detuning=to_angular(config.detuning_hz),
        sigma=sigma,
        ground_sigma=ground.detuning_spread,
        offsets=offsets,
        ground_offsets=ground_offsets,
        times=times,
        initial=initial,
        readout=readout,
        reference_counts=reference_counts,
    )
    traces = parallel_map(partial(_two_photon_trace, setup), rabis, workers)

    jittered = config.jitter_samples > 1 and (setup.sigma > 0 or setup.ground_sigma > 0)
    envelope = config.envelope
    if envelope == "auto":
        envelope = "gaussian" if jittered else "exponential"
    gap = model.energy(A1) - model.energy(A2) if A1 in model.labels else np.inf
    points, fitted_rabi, fitted_decay, ok = [], [], [], []
    for power, rabi, (signal, _, _) in zip(powers, rabis, traces):
        analytic = TwoPhotonParams(
            omega_plus=rabi / 2 * overlap_plus,
            omega_minus=rabi / 2 * overlap_minus,
            detuning_a2=setup.detuning,
            a1_a2_gap=gap,
            gamma=decay.rate,
            detuning_uncertainty=setup.sigma,
        )
        rabi_prime = abs(two_photon_rabi(analytic))
        fit = fit_damped_cosine(times, signal, envelope, frequency_guess=2 * rabi_prime)
        if not fit.ok:
            logger.warning(f"Two-photon fit at {power:.3g} W flagged: {fit.message}")
        entry = _fit_entry(fit, halve=True)
        entry |= {
            "power_w": power,
            "rabi_hz": to_hz(rabi),
            "analytic_rabi_hz": to_hz(rabi_prime),
            "analytic_rabi_single_hz": to_hz(abs(two_photon_rabi_single(analytic))),
            "analytic_decay_hz": to_hz(two_photon_decay(analytic)),
            "adiabaticity": adiabaticity_check(analytic),
            "final_signal": float(signal[-1]),
        }
        points.append(entry)
        fitted_rabi.append(entry["frequency_hz"])
        fitted_decay.append(entry["decay_hz"])
        ok.append(fit.ok)

    ok_mask = np.array(ok)
    rabi_line = _line_summary(powers, np.array(fitted_rabi), ok_mask)
    decay_line = _line_summary(powers, np.array(fitted_decay), ok_mask) if jittered else None
    fits: dict[str, Any] = {
        "envelope": envelope,
        "reference_counts": reference_counts,
        "points": points,
        "rabi_vs_power": rabi_line,
        "decay_vs_power": decay_line,
    }
    inv_a2 = 1 / setup.detuning
    inv_a1 = 0.0 if np.isinf(gap) else 1 / (setup.detuning + gap)
    c1, c2 = inv_a2 - inv_a1, inv_a2**2 - inv_a1**2
    if rabi_line is not None and rabi_line["slope"] > 0:
        s = overlap_plus * overlap_minus / 4
        slope = to_angular(rabi_line["slope"])
        fits["recovered_rabi_per_sqrt_w_hz"] = to_hz(np.sqrt(slope / (s * abs(c1))))
        if decay_line is not None:
            ratio = decay_line["slope"] / rabi_line["slope"]
            fits["recovered_detuning_uncertainty_hz"] = to_hz(ratio * abs(c1) / abs(c2))
    return ScanResult(
        recipe="rabi-2photon",
        axes=(Axis("power_w", powers), Axis("time_s", times)),
        observables={
            "signal": np.array([t[0] for t in traces]),
            "population_plus": np.array([t[1] for t in traces]),
            "population_minus": np.array([t[2] for t in traces]),
        },
        fits=fits,
        provenance=_provenance(seed=config.seed),
        population_keys=("population_plus", "population_minus"),
    )


# %% [markdown]
# ## Double-dark-resonance map
# The tripod (|0>, |+1>, |-1>, A2) is embedded in the nine-level model; the other
# excited levels stay undriven and empty.


# %%
TRIPOD_LEVELS = (ZERO, PLUS, MINUS, A2)


@dataclass(frozen=True)
class DarkLine:
    position_hz: float
    slope: float
    rows: int

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def dark_map_channels(config: DarkMapConfig) -> tuple[CollapseChannel, ...]:
    n = len(ALL_LABELS)
    index = {lab: i for i, lab in enumerate(ALL_LABELS)}
    decay = config.decay_params()
    channels: list[CollapseChannel] = []
    for e in ALL_LABELS:
        if e.is_ground:
            continue
        for g, rate in decay.rates(e).items():
            if rate > 0:
                channels.append(CollapseChannel.decay(n, index[e], index[g], rate))
    if config.ground_dephasing_per_s > 0:
        for g in (ZERO, PLUS, MINUS):
            channels.append(CollapseChannel.dephasing(n, index[g], config.ground_dephasing_per_s))
    if config.ground_mixing_per_s > 0:
        for g in (PLUS, MINUS):
            channels.extend(
                CollapseChannel.mixing(n, index[ZERO], index[g], config.ground_mixing_per_s)
            )
    return tuple(channels)


def embedded_tripod(h4: NDArray[np.complex128]) -> NDArray[np.complex128]:
    positions = [ALL_LABELS.index(lab) for lab in TRIPOD_LEVELS]
    h = np.zeros((len(ALL_LABELS), len(ALL_LABELS)), dtype=complex)
    h[np.ix_(positions, positions)] = h4
    return h


def _dark_map_row(
    config: DarkMapConfig,
    channels: tuple[CollapseChannel, ...],
    observable: str,
    detuning_hz: float,
) -> NDArray[np.float64]:
    excited = np.array([not lab.is_ground for lab in ALL_LABELS])
    n = len(ALL_LABELS)
    start = DensityMatrix.from_populations(
        [1.0 if lab.is_ground else 0.0 for lab in ALL_LABELS]
    ).vec()
    row = np.empty(config.modulation_offset.points)
    for j, modulation_hz in enumerate(config.modulation_hz()):
        params = config.tripod_params(detuning_hz, modulation_hz)
        h = embedded_tripod(tripod_hamiltonian(params))
        L = liouvillian(h, channels)
        if observable == "steady_state":
            populations = steady_state(L).state.populations
        else:
            _, integral = segment_operators(L, config.pulse_s)
            mean = (integral @ start).reshape(n, n) / config.pulse_s
            populations = np.real(np.diag(mean))
        row[j] = float(populations[excited].sum())
    return row


def has_persistent_dark_state(config: DarkMapConfig) -> bool:
    """True when some ground superposition stays dark at every modulation frequency.

    Without Zeeman splitting the |+1>/|-1> pair always holds a dark combination, and an
    undriven ground level is dark by itself. With no ground relaxation to empty it, the
    stationary state is then not unique anywhere on the map.
    """
    relaxed = config.ground_mixing_per_s > 0 or config.ground_dephasing_per_s > 0
    undriven = min(config.omega_0_hz, config.omega_plus_hz, config.omega_minus_hz) == 0
    return not relaxed and (config.zeeman_hz == 0 or undriven)


def extract_dark_lines(
    detunings_hz: NDArray[np.float64],
    modulations_hz: NDArray[np.float64],
    excited: NDArray[np.float64],
    prominence: float = 0.05,
    min_row_fraction: float = 0.5,
) -> list[DarkLine]:
    """Loci of fluorescence minima: per detuning row, dips deeper than
    `prominence * row max` against their shoulders, grouped across rows by modulation
    frequency. A group found in fewer than `min_row_fraction` of the rows is dropped,
    which removes valleys that move with the detuning."""
    step = float(np.min(np.diff(modulations_hz))) if modulations_hz.size > 1 else 0.0
    found = [
        (float(d), float(m))
        for d, row in zip(detunings_hz, excited)
        for m in find_spectral_minima(modulations_hz, row, prominence)
    ]
    if not found:
        return []
    found.sort(key=lambda p: p[1])
    groups, current = [], [found[0]]
    for point in found[1:]:
        if point[1] - current[-1][1] <= 1.5 * step:
            current.append(point)
        else:
            groups.append(current)
            current = [point]
    groups.append(current)

    lines = []
    for group in groups:
        d = np.array([p[0] for p in group])
        m = np.array([p[1] for p in group])
        rows = int(np.unique(d).size)
        if rows < min_row_fraction * len(detunings_hz):
            continue
        slope = float(np.polyfit(d, m, 1)[0]) if rows > 1 else 0.0
        lines.append(DarkLine(float(m.mean()), slope, rows))
    return lines


def run_dark_resonance_map(config: DarkMapConfig, workers: int | None = None) -> ScanResult:
    """Excited population over (one-photon detuning, modulation frequency).

    `steady_state` mode takes the stationary state at each point; `time_resolved`
    averages the excited population over `pulse_s` from the mixed ground state. A
    steady-state map whose stationary state is not unique (see
    `has_persistent_dark_state`) is computed with the time-resolved observable.
    """
    detunings = config.detuning.values()
    modulations = config.modulation_hz()
    channels = dark_map_channels(config)
    observable = config.mode
    if observable == "steady_state" and has_persistent_dark_state(config):
        logger.warning(
            "Dark map: a ground superposition is dark at every point and no ground "
            f"relaxation is set; averaging over {config.pulse_s:.3g} s instead of "
            "taking the steady state"
        )
        observable = "time_resolved"
    rows = parallel_map(
        partial(_dark_map_row, config, channels, observable), detunings, workers
    )
    excited = np.vstack(rows)
    lines = extract_dark_lines(
        detunings, modulations, excited, config.dark_line_prominence
    )
    expected = dark_line_positions(config.zfs_hz, config.zeeman_hz)
    logger.info(f"Dark map: {len(lines)} dark line(s) found")
    return ScanResult(
        recipe="darkmap",
        axes=(Axis("detuning_hz", detunings), Axis("modulation_hz", modulations)),
        observables={"excited_population": excited},
        fits={
            "observable": observable,
            "dark_lines": [line.as_dict() for line in lines],
            "expected_positions_hz": sorted(set(expected)),
            "grid_step_hz": config.modulation_offset.step_hz,
        },
        provenance=_provenance(),
        population_keys=("excited_population",),
    )
