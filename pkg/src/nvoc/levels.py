"""Level structure of the negatively charged NV centre.

Ground triplet |0>, |+1>, |-1> and the six orbital-spin excited states. Excited states
are built in the orbital {X, Y} x spin {+1, 0, -1} product basis and reported in the
symmetry-adapted basis (A1, A2, Ex, Ey, E1, E2):

    E+- = (X +- iY)/sqrt(2)
    A1 = (|E-,+1> - |E+,-1>)/sqrt(2)      A2 = (|E-,+1> + |E+,-1>)/sqrt(2)
    E1 = (|E-,-1> - |E+,+1>)/sqrt(2)      E2 = (|E-,-1> + |E+,+1>)/sqrt(2)
    Ex = |X,0>                            Ey = |Y,0>

All frequencies are angular (rad/s). Excited energies are measured from the centroid of
the excited manifold, ground energies from |0>, so a transition frequency is simply
`E_excited - E_ground` on a scale with the optical zero-phonon frequency removed.

Polarization components are ordered (sigma+, sigma-, pi). A sigma+ (sigma-) photon
creates the E+ (E-) orbital; the NV optical transitions have no pi component.
"""

# %% [markdown]
# ## Imports

# %%
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, replace
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq, linear_sum_assignment

from nvoc.config import load_constants, settings
from nvoc.errors import CalibrationError, ConfigurationError
from nvoc.logger import setup_logging
from nvoc.utils import TWO_PI, format_docstring, to_hz

# %%
logger = setup_logging(__name__, settings.log_level)

DIPOLE_ZERO = 1e-12
DEGENERACY_TOL = 1e-9


# %% [markdown]
# ## Labels


# %%
class StateLabel(StrEnum):
    ZERO = "0"
    PLUS = "+1"
    MINUS = "-1"
    A1 = "A1"
    A2 = "A2"
    EX = "Ex"
    EY = "Ey"
    E1 = "E1"
    E2 = "E2"

    @property
    def is_ground(self) -> bool:
        return self in GROUND_LABELS


GROUND_LABELS = (StateLabel.ZERO, StateLabel.PLUS, StateLabel.MINUS)
EXCITED_LABELS = (
    StateLabel.A1,
    StateLabel.A2,
    StateLabel.EX,
    StateLabel.EY,
    StateLabel.E1,
    StateLabel.E2,
)
ALL_LABELS = GROUND_LABELS + EXCITED_LABELS
SPIN_PROJECTION = {StateLabel.ZERO: 0, StateLabel.PLUS: 1, StateLabel.MINUS: -1}


# %% [markdown]
# ## Parameters


# %%
def _constant(name: str) -> float:
    return load_constants().angular(name)


class GroundParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    zfs: float = Field(
        default_factory=lambda: _constant("zero_field_splitting"),
        gt=0,
        description="Zero-field splitting between |0> and |+-1> (rad/s).",
    )
    zeeman_delta: float = Field(
        default=0.0, ge=0, description="Splitting between |+1> and |-1> (rad/s)."
    )
    detuning_spread: float = Field(
        default=0.0,
        ge=0,
        description="Gaussian sigma of a static ground-state detuning offset (rad/s).",
    )


class ExcitedParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    spin_orbit: float = Field(default_factory=lambda: _constant("spin_orbit"))
    spin_spin_parallel: float = Field(
        default_factory=lambda: _constant("spin_spin_parallel")
    )
    spin_spin_perp: float = Field(
        default_factory=lambda: _constant("spin_spin_perpendicular")
    )
    spin_spin_mixing: float = Field(default_factory=lambda: _constant("spin_spin_mixing"))
    strain_x: float = 0.0
    strain_y: float = 0.0

    @property
    def strain(self) -> float:
        return float(np.hypot(self.strain_x, self.strain_y))

    def with_strain(self, magnitude: float, angle: float | None = None) -> "ExcitedParams":
        """Copy with the given strain magnitude, keeping the current direction by default."""
        if angle is None:
            angle = np.arctan2(self.strain_y, self.strain_x) if self.strain > 0 else 0.0
        return self.model_copy(
            update={
                "strain_x": magnitude * float(np.cos(angle)),
                "strain_y": magnitude * float(np.sin(angle)),
            }
        )


# %% [markdown]
# ## Hamiltonians


# %%
def build_ground_hamiltonian(params: GroundParams) -> NDArray[np.complex128]:
    """Diagonal ground Hamiltonian in the basis (|0>, |+1>, |-1>)."""
    return np.diag(ground_energies(params)).astype(np.complex128)


def ground_energies(params: GroundParams) -> NDArray[np.float64]:
    half = params.zeeman_delta / 2
    return np.array([0.0, params.zfs + half, params.zfs - half])


# %%
_R2 = np.sqrt(2.0)
_SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _R2
_SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _R2
_SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
_I2 = np.eye(2, dtype=complex)
_I3 = np.eye(3, dtype=complex)
_PX = np.array([[0, 1], [1, 0]], dtype=complex)
_PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PZ = np.array([[1, 0], [0, -1]], dtype=complex)

_ORBITAL = {
    "X": np.array([1, 0], dtype=complex),
    "Y": np.array([0, 1], dtype=complex),
    "E+": np.array([1, 1j]) / _R2,
    "E-": np.array([1, -1j]) / _R2,
}
_SPIN = {m: np.eye(3, dtype=complex)[i] for i, m in enumerate((1, 0, -1))}


def _ket(orbital: str, m: int) -> NDArray[np.complex128]:
    return np.kron(_ORBITAL[orbital], _SPIN[m])


def _anti(a: NDArray, b: NDArray) -> NDArray:
    return a @ b + b @ a


# Columns: symmetry-adapted states in EXCITED_LABELS order, written in the product basis.
SYMMETRY_BASIS = np.column_stack(
    [
        (_ket("E-", 1) - _ket("E+", -1)) / _R2,
        (_ket("E-", 1) + _ket("E+", -1)) / _R2,
        _ket("X", 0),
        _ket("Y", 0),
        (_ket("E-", -1) - _ket("E+", 1)) / _R2,
        (_ket("E-", -1) + _ket("E+", 1)) / _R2,
    ]
)


def _product_hamiltonian(p: ExcitedParams) -> NDArray[np.complex128]:
    h = p.spin_spin_parallel * np.kron(_I2, _SZ @ _SZ - 2 / 3 * _I3)
    h = h - p.spin_orbit * np.kron(_PY, _SZ)
    h = h + p.spin_spin_perp * (
        np.kron(_PZ, _SY @ _SY - _SX @ _SX) - np.kron(_PX, _anti(_SX, _SY))
    )
    h = h + p.spin_spin_mixing * (
        np.kron(_PZ, _anti(_SX, _SZ)) - np.kron(_PX, _anti(_SY, _SZ))
    )
    h = h + p.strain_x * np.kron(_PZ, _I3) - p.strain_y * np.kron(_PX, _I3)
    return h


# %%
def build_excited_hamiltonian(params: ExcitedParams) -> NDArray[np.complex128]:
    """6x6 excited-state Hamiltonian in the basis (A1, A2, Ex, Ey, E1, E2).

    Labeled eigenvalues (continued from zero strain) come from `excited_spectrum`.
    """
    h = SYMMETRY_BASIS.conj().T @ _product_hamiltonian(params) @ SYMMETRY_BASIS
    return (h + h.conj().T) / 2


# %% [markdown]
# ## Label tracking
# Eigenvectors at each strain step are matched to the previous step's labeled vectors by
# maximum overlap. Inside a (near-)degenerate cluster the previous vectors are projected
# onto the cluster and orthonormalized symmetrically, which makes degenerate labels well
# defined; labels inside a cluster follow energy order.


# %%
@dataclass(frozen=True)
class ExcitedSpectrum:
    """Labeled excited eigenvalues and eigenvectors (columns in EXCITED_LABELS order)."""

    params: ExcitedParams
    energies: NDArray[np.float64]
    vectors: NDArray[np.complex128]

    def energy(self, label: StateLabel) -> float:
        return float(self.energies[EXCITED_LABELS.index(label)])

    def vector(self, label: StateLabel) -> NDArray[np.complex128]:
        return self.vectors[:, EXCITED_LABELS.index(label)]

    def product_vector(self, label: StateLabel) -> NDArray[np.complex128]:
        return SYMMETRY_BASIS @ self.vector(label)

    def as_dict(self) -> dict[StateLabel, float]:
        return {label: float(e) for label, e in zip(EXCITED_LABELS, self.energies)}


def _clusters(w: NDArray[np.float64]) -> list[list[int]]:
    scale = max(float(np.abs(w).max()), 1.0)
    groups = [[0]]
    for j in range(1, len(w)):
        if w[j] - w[j - 1] < DEGENERACY_TOL * scale:
            groups[-1].append(j)
        else:
            groups.append([j])
    return groups


def _label_step(
    h: NDArray[np.complex128], reference: NDArray[np.complex128]
) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
    w, v = np.linalg.eigh(h)
    groups = _clusters(w)
    slot_group = [g for g, members in enumerate(groups) for _ in members]
    overlap = np.abs(reference.conj().T @ v) ** 2
    weight = np.stack(
        [overlap[:, members].sum(axis=1) for members in groups], axis=1
    )  # labels x clusters
    rows, slots = linear_sum_assignment(-weight[:, slot_group])

    n = len(w)
    energies = np.empty(n)
    vectors = np.empty((n, n), dtype=complex)
    assigned: dict[int, list[int]] = {}
    for label, slot in zip(rows, slots):
        assigned.setdefault(slot_group[slot], []).append(int(label))

    for g, labels in assigned.items():
        labels.sort()
        members = groups[g]
        basis = v[:, members]
        if len(members) == 1:
            block = basis
        else:
            projected = basis @ (basis.conj().T @ reference[:, labels])
            left, sv, right = np.linalg.svd(projected, full_matrices=False)
            block = left @ right if sv.min() > 1e-8 else basis
        for k, label in enumerate(labels):
            vec = block[:, k]
            ov = np.vdot(reference[:, label], vec)
            if abs(ov) > 1e-12:
                vec = vec * (np.conj(ov) / abs(ov))
            vectors[:, label] = vec
            energies[label] = float(np.real(np.vdot(vec, h @ vec)))
    return energies, vectors


def _continue(
    params: ExcitedParams,
    magnitudes: Sequence[float],
    reference: NDArray[np.complex128] | None = None,
    angle: float | None = None,
) -> list[ExcitedSpectrum]:
    if reference is None:
        reference = np.eye(len(EXCITED_LABELS), dtype=complex)
    spectra = []
    for s in magnitudes:
        p = params.with_strain(float(s), angle)
        energies, vectors = _label_step(build_excited_hamiltonian(p), reference)
        spectra.append(ExcitedSpectrum(p, energies, vectors))
        reference = vectors
    return spectra


# %%
def excited_spectrum(params: ExcitedParams, steps: int | None = None) -> ExcitedSpectrum:
    """Labeled spectrum, carried from zero strain to `params` in `steps` strain steps."""
    steps = steps or settings.continuation_steps
    target = params.strain
    magnitudes = [0.0] if target == 0 else list(np.linspace(0.0, target, steps + 1))
    spectrum = _continue(params, magnitudes)[-1]
    return ExcitedSpectrum(params, spectrum.energies, spectrum.vectors)


def strain_fan(
    params: ExcitedParams, strains: ArrayLike, angle: float | None = None
) -> NDArray[np.float64]:
    """Labeled excited energies (rows: strain magnitudes, columns: EXCITED_LABELS).

    The grid must be ascending; labels are carried point to point along it. The strain
    direction is `angle`, or that of `params` when omitted.
    """
    strains = np.asarray(strains, dtype=float)
    if strains.ndim != 1 or np.any(np.diff(strains) < 0) or strains.min() < 0:
        raise ConfigurationError("strain grid must be a 1-D ascending list of magnitudes")
    start = excited_spectrum(params.with_strain(float(strains[0]), angle))
    spectra = _continue(params, strains[1:], reference=start.vectors, angle=angle)
    return np.vstack([start.energies] + [s.energies for s in spectra])


def transition_fan(
    ground: GroundParams, params: ExcitedParams, strains: ArrayLike
) -> NDArray[np.float64]:
    """Transition frequencies along a strain grid, shape (strains, 3 ground, 6 excited)."""
    fan = strain_fan(params, strains)
    return fan[:, None, :] - ground_energies(ground)[None, :, None]


# %% [markdown]
# ## Strain calibration


# %%
def strain_splitting(params: ExcitedParams) -> float:
    """Ex-Ey splitting, the natural strain unit."""
    spectrum = excited_spectrum(params)
    return abs(spectrum.energy(StateLabel.EX) - spectrum.energy(StateLabel.EY))


def with_strain_splitting(params: ExcitedParams, splitting: float) -> ExcitedParams:
    """Copy of `params` whose strain produces the given Ex-Ey splitting."""
    if splitting < 0:
        raise ConfigurationError("strain splitting must be non-negative")
    if splitting == 0:
        return params.with_strain(0.0)
    upper = splitting
    while strain_splitting(params.with_strain(upper)) < splitting:
        upper *= 2
    root = brentq(
        lambda s: strain_splitting(params.with_strain(s)) - splitting,
        0.0,
        upper,
        xtol=1e-6,
    )
    return params.with_strain(float(root))


def a1_a2_gap(params: ExcitedParams) -> float:
    spectrum = excited_spectrum(params)
    return spectrum.energy(StateLabel.A1) - spectrum.energy(StateLabel.A2)


@format_docstring(gap_ghz=3.2)
def calibrate_strain(
    params: ExcitedParams,
    target_gap: float | None = None,
    angle: float = 0.0,
    max_strain: float = TWO_PI * 20e9,
    points: int = 400,
) -> ExcitedParams:
    """Strain (along `angle`) for which the A1-A2 gap equals `target_gap`.

    The default target is the constants-table gap (2pi x {gap_ghz} GHz). The gap is
    scanned from zero strain to `max_strain`; the first sign change of
    `gap - target_gap` is refined with Brent's method.

    Raises:
        CalibrationError: if the gap never crosses the target in the scanned range.
    """
    if target_gap is None:
        target_gap = _constant("a1_a2_gap")
    magnitudes = np.linspace(0.0, max_strain, points)
    base = params.with_strain(0.0, angle)
    fan = strain_fan(base, magnitudes, angle)
    a1, a2 = EXCITED_LABELS.index(StateLabel.A1), EXCITED_LABELS.index(StateLabel.A2)
    residual = fan[:, a1] - fan[:, a2] - target_gap
    if residual[0] == 0:
        return base
    crossings = np.nonzero(np.sign(residual[1:]) != np.sign(residual[:-1]))[0]
    if crossings.size == 0:
        raise CalibrationError(
            "A1-A2 gap never reaches the target in the scanned strain range",
            target_hz=to_hz(target_gap),
            gap_range_hz=[to_hz(residual.min() + target_gap), to_hz(residual.max() + target_gap)],
        )
    i = int(crossings[0])
    root = brentq(
        lambda s: a1_a2_gap(base.with_strain(s, angle)) - target_gap,
        float(magnitudes[i]),
        float(magnitudes[i + 1]),
        xtol=1e-3,
    )
    logger.info(f"Calibrated strain 2pi x {to_hz(root) / 1e9:.4f} GHz for the A1-A2 gap")
    return base.with_strain(float(root), angle)


# %% [markdown]
# ## Transitions


# %%
class TransitionKind(StrEnum):
    SPIN_PRESERVING = "spin-preserving"
    CROSS = "cross"


def _kind(ground: StateLabel, excited: StateLabel) -> TransitionKind:
    zero_like = excited in (StateLabel.EX, StateLabel.EY)
    if (ground == StateLabel.ZERO) == zero_like:
        return TransitionKind.SPIN_PRESERVING
    return TransitionKind.CROSS


def _dipole(product_vector: NDArray[np.complex128], m: int) -> NDArray[np.complex128]:
    d = np.array(
        [
            np.vdot(product_vector, _ket("E+", m)),
            np.vdot(product_vector, _ket("E-", m)),
            0.0,
        ],
        dtype=complex,
    )
    d[np.abs(d) < DIPOLE_ZERO] = 0.0
    return d


@dataclass(frozen=True)
class Transition:
    ground: StateLabel
    excited: StateLabel
    frequency: float
    kind: TransitionKind
    dipole: NDArray[np.complex128]

    @property
    def strength(self) -> float:
        return float(np.sum(np.abs(self.dipole) ** 2))

    def coupling(self, jones: ArrayLike) -> complex:
        """Polarization-weighted amplitude eps . d."""
        return complex(np.dot(np.asarray(jones, dtype=complex), self.dipole))


@dataclass(frozen=True)
class TransitionTable:
    transitions: tuple[Transition, ...]

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)

    def lookup(self, ground: StateLabel, excited: StateLabel) -> Transition:
        for t in self.transitions:
            if t.ground == ground and t.excited == excited:
                return t
        raise ConfigurationError(f"no dipole-allowed transition {ground} -> {excited}")

    def for_polarization(self, jones: ArrayLike) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions if t.coupling(jones) != 0)

    def lines(
        self, jones: ArrayLike | None = None, tol: float = TWO_PI * 1e3
    ) -> NDArray[np.float64]:
        """Distinct line frequencies, merging lines closer than `tol`."""
        selected = self.transitions if jones is None else self.for_polarization(jones)
        freqs = np.sort([t.frequency for t in selected])
        if freqs.size == 0:
            return freqs
        keep = np.concatenate([[True], np.diff(freqs) > tol])
        return freqs[keep]


# %%
def transition_table(ground: GroundParams, excited: ExcitedParams) -> TransitionTable:
    """All ground -> excited pairs with a nonzero dipole amplitude."""
    spectrum = excited_spectrum(excited)
    e_ground = ground_energies(ground)
    transitions = []
    for gi, g in enumerate(GROUND_LABELS):
        for e in EXCITED_LABELS:
            d = _dipole(spectrum.product_vector(e), SPIN_PROJECTION[g])
            if not np.any(d):
                continue
            transitions.append(
                Transition(g, e, spectrum.energy(e) - e_ground[gi], _kind(g, e), d)
            )
    return TransitionTable(tuple(transitions))


# %% [markdown]
# ## Decay and level models


# %%
def _default_branching() -> dict[StateLabel, tuple[float, float, float]]:
    return {StateLabel(k): v for k, v in load_constants().branching.items()}


class DecayParams(BaseModel):
    """Radiative decay: one total rate and a branching vector into (|0>, |+1>, |-1>)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rate: float = Field(default_factory=lambda: _constant("excited_decay_rate"), ge=0)
    branching: dict[StateLabel, tuple[float, float, float]] = Field(
        default_factory=_default_branching
    )

    def rates(self, excited: StateLabel) -> dict[StateLabel, float]:
        probabilities = self.branching[excited]
        return {g: self.rate * p for g, p in zip(GROUND_LABELS, probabilities)}

    def without_decay_to_zero(self) -> "DecayParams":
        """Branching of the |+-1>-manifold states with the |0> channel removed."""
        branching = dict(self.branching)
        for label in (StateLabel.A1, StateLabel.A2, StateLabel.E1, StateLabel.E2):
            _, plus, minus = branching[label]
            total = plus + minus
            branching[label] = (0.0, plus / total, minus / total)
        return self.model_copy(update={"branching": branching})


@dataclass(frozen=True)
class LevelModel:
    """Energies, dipole amplitudes and decay of a set of NV levels."""

    labels: tuple[StateLabel, ...]
    energies: NDArray[np.float64]
    dipoles: Mapping[tuple[StateLabel, StateLabel], NDArray[np.complex128]]
    decay: Mapping[StateLabel, Mapping[StateLabel, float]]

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: StateLabel) -> int:
        return self.labels.index(label)

    def energy(self, label: StateLabel) -> float:
        return float(self.energies[self.index(label)])

    @property
    def ground_labels(self) -> tuple[StateLabel, ...]:
        return tuple(lab for lab in self.labels if lab.is_ground)

    @property
    def excited_labels(self) -> tuple[StateLabel, ...]:
        return tuple(lab for lab in self.labels if not lab.is_ground)

    def transition_frequency(self, ground: StateLabel, excited: StateLabel) -> float:
        return self.energy(excited) - self.energy(ground)

    def dipole(self, ground: StateLabel, excited: StateLabel) -> NDArray[np.complex128]:
        return self.dipoles.get((ground, excited), np.zeros(3, dtype=complex))

    def pairs(self) -> list[tuple[StateLabel, StateLabel]]:
        return [
            (g, e)
            for g in self.ground_labels
            for e in self.excited_labels
            if np.any(self.dipole(g, e))
        ]

    def emission_rates(self) -> NDArray[np.float64]:
        """Total radiative rate of each level (zero for ground levels)."""
        return np.array([sum(self.decay.get(lab, {}).values()) for lab in self.labels])

    def shifted(self, offsets: Mapping[StateLabel, float]) -> "LevelModel":
        energies = self.energies.copy()
        for label, offset in offsets.items():
            energies[self.index(label)] += offset
        return replace(self, energies=energies)

    def subspace(self, labels: Sequence[StateLabel]) -> "LevelModel":
        """Restrict to `labels`; decay into removed ground levels is redistributed."""
        keep = tuple(lab for lab in self.labels if lab in set(labels))
        missing = set(labels) - set(keep)
        if missing:
            raise ConfigurationError(f"labels {sorted(missing)} are not in the model")
        decay: dict[StateLabel, dict[StateLabel, float]] = {}
        for e in keep:
            if e.is_ground or e not in self.decay:
                continue
            rates = self.decay[e]
            total = sum(rates.values())
            kept = {g: r for g, r in rates.items() if g in keep}
            kept_total = sum(kept.values())
            if kept_total == 0:
                if total > 0:
                    logger.warning(f"{e} has no remaining decay channel in the subspace")
                continue
            decay[e] = {g: r * total / kept_total for g, r in kept.items()}
        return LevelModel(
            labels=keep,
            energies=np.array([self.energy(lab) for lab in keep]),
            dipoles={k: v for k, v in self.dipoles.items() if set(k) <= set(keep)},
            decay=decay,
        )


# %%
def nv_level_model(
    ground: GroundParams,
    excited: ExcitedParams,
    decay: DecayParams | None = None,
    *,
    pure_selection: bool = False,
) -> LevelModel:
    """Nine-level NV model in the order (0, +1, -1, A1, A2, Ex, Ey, E1, E2).

    With `pure_selection` the energies keep the strain shifts but the dipole amplitudes
    come from the unmixed symmetry-adapted states, i.e. ideal selection rules.
    """
    decay = decay or DecayParams()
    spectrum = excited_spectrum(excited)
    energies = np.concatenate([ground_energies(ground), spectrum.energies])
    dipoles = {}
    for g in GROUND_LABELS:
        for k, e in enumerate(EXCITED_LABELS):
            vec = SYMMETRY_BASIS[:, k] if pure_selection else spectrum.product_vector(e)
            d = _dipole(vec, SPIN_PROJECTION[g])
            if np.any(d):
                dipoles[(g, e)] = d
    return LevelModel(
        labels=ALL_LABELS,
        energies=energies,
        dipoles=dipoles,
        decay={e: decay.rates(e) for e in EXCITED_LABELS},
    )


if __name__ == "__main__":
    g = GroundParams()
    e = calibrate_strain(ExcitedParams())
    for t in transition_table(g, e):
        print(f"{t.ground:>3} -> {t.excited:<3} {to_hz(t.frequency) / 1e9:+8.3f} GHz  {t.kind}")
