"""Closed-form results for two-photon Rabi oscillations and tripod dark states.

Rabi amplitudes here are matrix elements: a tone of drive amplitude Omega on a transition
with polarization overlap (eps . d) has element Omega/2 * |eps . d|, the quantity that
appears off-diagonal in `tripod_hamiltonian`. Detunings are positive for a laser below
the transition.
"""

# %% [markdown]
# ## Imports

# %%
import math

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, computed_field

from nvoc.config import load_constants, settings
from nvoc.errors import DomainError
from nvoc.logger import setup_logging

# %%
logger = setup_logging(__name__, settings.log_level)


def _constant(name: str) -> float:
    return load_constants().angular(name)


# %% [markdown]
# ## Two-photon Rabi oscillations


# %%
class TwoPhotonParams(BaseModel):
    """Far-detuned Raman drive of |+1> <-> |-1> through A2, with A1 above it."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_plus: complex
    omega_minus: complex
    detuning_a2: float = Field(
        default_factory=lambda: _constant("two_photon_detuning"),
        description="Detuning from A2 (rad/s).",
    )
    a1_a2_gap: float = Field(
        default_factory=lambda: _constant("a1_a2_gap"),
        ge=0,
        description="A1 - A2 splitting (rad/s); infinity removes A1.",
    )
    gamma: float = Field(default_factory=lambda: _constant("excited_decay_rate"), ge=0)
    detuning_uncertainty: float = Field(
        default_factory=lambda: _constant("detuning_uncertainty"), ge=0
    )

    @computed_field
    @property
    def detuning_a1(self) -> float:
        return self.detuning_a2 + self.a1_a2_gap

    def scaled(self, factor: float) -> "TwoPhotonParams":
        """Both amplitudes scaled by `factor` (power scales by factor**2)."""
        return self.model_copy(
            update={
                "omega_plus": self.omega_plus * factor,
                "omega_minus": self.omega_minus * factor,
            }
        )


def _inverse_detunings(p: TwoPhotonParams) -> tuple[float, float]:
    if p.detuning_a2 == 0:
        raise DomainError("detuning from A2 is zero", detuning_a2=p.detuning_a2)
    if p.detuning_a1 == 0:
        raise DomainError("detuning from A1 is zero", detuning_a1=p.detuning_a1)
    inv_a1 = 0.0 if math.isinf(p.detuning_a1) else 1.0 / p.detuning_a1
    return 1.0 / p.detuning_a2, inv_a1


def two_photon_rabi(p: TwoPhotonParams) -> complex:
    """Omega' = conj(Omega+) * Omega- * (1/Delta2 - 1/Delta1).

    A1 enters with the opposite sign because its two spin components carry the opposite
    relative phase to A2's.
    """
    inv_a2, inv_a1 = _inverse_detunings(p)
    return complex(np.conj(p.omega_plus) * p.omega_minus * (inv_a2 - inv_a1))


def two_photon_rabi_single(p: TwoPhotonParams) -> complex:
    """Single excited-state limit, conj(Omega+) * Omega- / Delta2."""
    inv_a2, _ = _inverse_detunings(p)
    return complex(np.conj(p.omega_plus) * p.omega_minus * inv_a2)


def two_photon_decay(p: TwoPhotonParams) -> float:
    """Gamma = |Omega+||Omega-| (1/Delta2^2 - 1/Delta1^2) * sigma_Delta.

    First-order sensitivity of Omega' to a common detuning shift, times the static
    detuning jitter. Averaging over Gaussian jitter turns the oscillation envelope into
    exp(-(Gamma t)^2 / 2) in the element convention.
    """
    inv_a2, inv_a1 = _inverse_detunings(p)
    sensitivity = abs(p.omega_plus) * abs(p.omega_minus) * (inv_a2**2 - inv_a1**2)
    return float(abs(sensitivity) * p.detuning_uncertainty)


def scattering_rate(p: TwoPhotonParams) -> float:
    """Spontaneous scattering during the Raman drive, gamma |Omega+ Omega-| / Delta2^2."""
    inv_a2, _ = _inverse_detunings(p)
    return float(p.gamma * abs(p.omega_plus) * abs(p.omega_minus) * inv_a2**2)


def adiabaticity_check(p: TwoPhotonParams) -> float:
    """max(|Omega+|^2, |Omega-|^2) * gamma / (Delta2^2 * |Omega'|).

    Small values mark the regime where excited-state population stays negligible over
    one two-photon period. The ratio is homogeneous of degree zero in the amplitudes.
    """
    rabi = abs(two_photon_rabi(p))
    if rabi == 0:
        raise DomainError("two-photon Rabi frequency is zero")
    strongest = max(abs(p.omega_plus) ** 2, abs(p.omega_minus) ** 2)
    return float(strongest * p.gamma / (p.detuning_a2**2 * rabi))


def is_adiabatic(p: TwoPhotonParams, threshold: float | None = None) -> bool:
    threshold = settings.adiabatic_threshold if threshold is None else threshold
    return adiabaticity_check(p) < threshold


# %% [markdown]
# ## Dark states of the tripod
# Basis (|0>, |+1>, |-1>, |A2>). Each dark state lives in the span of |0> and one of
# |+-1>, and is annihilated by the A2 coupling when its two-photon resonance holds.


# %%
def _pair(omega_0: complex, omega_k: complex, name: str) -> float:
    norm = math.hypot(abs(omega_0), abs(omega_k))
    if norm == 0:
        raise DomainError(f"Omega0 and {name} are both zero; the dark state is undefined")
    return norm


def dark_states(
    omega_0: complex, omega_plus: complex, omega_minus: complex
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """|D+-> = (Omega0 |+-1> - Omega+- |0>) / sqrt(|Omega0|^2 + |Omega+-|^2)."""
    states = []
    for k, (omega, name) in enumerate(((omega_plus, "Omega+"), (omega_minus, "Omega-")), 1):
        norm = _pair(omega_0, omega, name)
        v = np.zeros(4, dtype=complex)
        v[0] = -omega / norm
        v[k] = omega_0 / norm
        states.append(v)
    return states[0], states[1]


def bright_state(omega_0: complex, omega_k: complex, sign: int = 1) -> NDArray[np.complex128]:
    """Partner of |D+-> in span{|0>, |+-1>}; the state the A2 coupling actually reaches."""
    if sign not in (1, -1):
        raise DomainError(f"sign must be +1 or -1, got {sign}")
    norm = _pair(omega_0, omega_k, "Omega+" if sign == 1 else "Omega-")
    v = np.zeros(4, dtype=complex)
    v[0] = np.conj(omega_0) / norm
    v[1 if sign == 1 else 2] = np.conj(omega_k) / norm
    return v


def dark_line_positions(zfs: float, zeeman_delta: float) -> tuple[float, float]:
    """Modulation frequencies of the two dark resonances, zfs -+ delta/2 (ascending)."""
    if zeeman_delta < 0:
        raise DomainError(f"Zeeman splitting must be non-negative, got {zeeman_delta}")
    return zfs - zeeman_delta / 2, zfs + zeeman_delta / 2


# %% [markdown]
# ## Two-level reference


# %%
def optical_bloch_population(rabi: float, detuning: float, gamma: float) -> float:
    """Steady excited population of a driven two-level system.

    (Omega^2/4) / (Delta^2 + gamma^2/4 + Omega^2/2), i.e. Omega^2 / (gamma^2 + 2 Omega^2)
    on resonance.
    """
    denominator = detuning**2 + gamma**2 / 4 + rabi**2 / 2
    if denominator == 0:
        raise DomainError("undriven, undamped two-level system has no unique steady state")
    return float(rabi**2 / 4 / denominator)
