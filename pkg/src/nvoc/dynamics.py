"""Lindblad master-equation engine.

    drho/dt = -i[H, rho] + sum_k rate_k (L_k rho L_k^+ - 1/2 {L_k^+ L_k, rho})

Density matrices are vectorized row-major, so vec(A rho B) = (A kron B^T) vec(rho).
Liouvillians up to `DENSE_LIMIT` levels are stored as dense superoperators; larger ones
are applied matrix-free.
"""

# %% [markdown]
# ## Imports

# %%
import io
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import solve_ivp, trapezoid
from scipy.linalg import expm

from nvoc.config import load_constants, settings
from nvoc.errors import ConfigurationError, NumericalError, StiffnessError
from nvoc.logger import setup_logging
from nvoc.utils import atomic_write_text

# %%
logger = setup_logging(__name__, settings.log_level)

DENSE_LIMIT = 16
TRACE_TOL = 1e-9
HERMITIAN_TOL = 1e-12
POSITIVITY_TOL = 1e-9
GUARD_TOL = 1e-8

Envelope = Callable[[float], float]


# %% [markdown]
# ## States


# %%
def hermitize(matrix: NDArray) -> NDArray:
    return (matrix + np.swapaxes(matrix, -1, -2).conj()) / 2


def _check_states(states: NDArray[np.complex128], guard: bool) -> NDArray[np.complex128]:
    """Trace guard, Hermitian projection and positivity check on a stack of states."""
    traces = np.trace(states, axis1=-2, axis2=-1)
    drift = np.abs(traces - 1)
    limit = GUARD_TOL if guard else TRACE_TOL
    if np.any(drift >= limit):
        worst = int(np.argmax(drift))
        raise NumericalError(
            "trace drifted beyond the renormalization guard",
            index=worst,
            trace_error=float(drift[worst]),
        )
    states = hermitize(states / traces.real[..., None, None])
    lowest = np.linalg.eigvalsh(states).min(axis=-1)
    if np.any(lowest < -POSITIVITY_TOL):
        worst = int(np.argmin(lowest))
        raise NumericalError(
            "density matrix lost positivity",
            index=worst,
            min_eigenvalue=float(lowest[worst]),
        )
    return states


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite state."""

    matrix: NDArray[np.complex128]

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError(f"density matrix must be square, got {m.shape}")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.conj().T).max() > HERMITIAN_TOL * scale:
            raise ConfigurationError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > TRACE_TOL:
            raise ConfigurationError(f"density matrix trace is {np.trace(m).real:.12g}")
        m = hermitize(m)
        if np.linalg.eigvalsh(m).min() < -POSITIVITY_TOL:
            raise ConfigurationError("density matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def pure(cls, vector: ArrayLike) -> "DensityMatrix":
        v = np.asarray(vector, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def basis(cls, n: int, k: int) -> "DensityMatrix":
        return cls.pure(np.eye(n)[k])

    @classmethod
    def mixed(cls, n: int) -> "DensityMatrix":
        return cls(np.eye(n, dtype=complex) / n)

    @classmethod
    def from_populations(cls, populations: ArrayLike) -> "DensityMatrix":
        p = np.asarray(populations, dtype=float)
        return cls(np.diag(p / p.sum()).astype(complex))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def populations(self) -> NDArray[np.float64]:
        return np.real(np.diag(self.matrix)).copy()

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def vec(self) -> NDArray[np.complex128]:
        return self.matrix.reshape(-1).copy()

    def expectation(self, operator: NDArray) -> complex:
        return complex(np.trace(operator @ self.matrix))


# %% [markdown]
# ## Collapse channels and Liouvillians


# %%
@dataclass(frozen=True, eq=False)
class CollapseChannel:
    operator: NDArray[np.complex128]
    rate: float

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ConfigurationError(f"collapse rate must be non-negative, got {self.rate}")
        op = np.asarray(self.operator, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ConfigurationError("jump operator must be square")
        object.__setattr__(self, "operator", op)

    @classmethod
    def decay(cls, n: int, source: int, target: int, rate: float) -> "CollapseChannel":
        op = np.zeros((n, n), dtype=complex)
        op[target, source] = 1.0
        return cls(op, rate)

    @classmethod
    def dephasing(cls, n: int, level: int, rate: float) -> "CollapseChannel":
        """Projector jump: coherences involving `level` decay at rate/2."""
        op = np.zeros((n, n), dtype=complex)
        op[level, level] = 1.0
        return cls(op, rate)

    @classmethod
    def mixing(cls, n: int, a: int, b: int, rate: float) -> tuple["CollapseChannel", ...]:
        """Incoherent population exchange a <-> b at `rate` in each direction."""
        return cls.decay(n, a, b, rate), cls.decay(n, b, a, rate)


def _commutator_super(h: NDArray) -> NDArray:
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_super(channels: Sequence[CollapseChannel], n: int) -> NDArray:
    eye = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)
    for ch in channels:
        if ch.rate == 0:
            continue
        op = ch.operator
        ldl = op.conj().T @ op
        out += ch.rate * (np.kron(op, op.conj()) - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T)))
    return out


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Generator of a master equation; `terms` add `f(t) * (-i[H_k, .])`."""

    hamiltonian: NDArray[np.complex128]
    channels: tuple[CollapseChannel, ...]
    terms: tuple[tuple[NDArray[np.complex128], Envelope], ...] = ()
    superoperator: NDArray[np.complex128] | None = field(default=None, repr=False)
    term_superoperators: tuple[NDArray[np.complex128], ...] = field(default=(), repr=False)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def time_dependent(self) -> bool:
        return bool(self.terms)

    @property
    def dense_storage(self) -> bool:
        return self.superoperator is not None

    def _effective(self) -> tuple[NDArray, list[tuple[NDArray, float]]]:
        h_eff = self.hamiltonian.astype(complex)
        jumps = []
        for ch in self.channels:
            if ch.rate == 0:
                continue
            h_eff = h_eff - 0.5j * ch.rate * (ch.operator.conj().T @ ch.operator)
            jumps.append((ch.operator, ch.rate))
        return h_eff, jumps

    def apply(self, t: float, vec: NDArray[np.complex128]) -> NDArray[np.complex128]:
        if self.superoperator is not None:
            out = self.superoperator @ vec
            for (_, envelope), sup in zip(self.terms, self.term_superoperators):
                out = out + envelope(t) * (sup @ vec)
            return out
        n = self.dim
        rho = vec.reshape(n, n)
        h_eff, jumps = self._effective()
        h = h_eff + sum((envelope(t) * hk for hk, envelope in self.terms), np.zeros_like(h_eff))
        d = -1j * (h @ rho - rho @ h.conj().T)
        for op, rate in jumps:
            d = d + rate * (op @ rho @ op.conj().T)
        return d.reshape(-1)

    def dense(self, t: float = 0.0) -> NDArray[np.complex128]:
        """Full n^2 x n^2 superoperator at time t."""
        if self.superoperator is not None:
            base = self.superoperator
            terms = self.term_superoperators
        else:
            base = _commutator_super(self.hamiltonian) + _dissipator_super(
                self.channels, self.dim
            )
            terms = tuple(_commutator_super(hk) for hk, _ in self.terms)
        out = base.copy()
        for (_, envelope), sup in zip(self.terms, terms):
            out += envelope(t) * sup
        return out


# %%
def liouvillian(
    H: ArrayLike,
    channels: Sequence[CollapseChannel] = (),
    terms: Sequence[tuple[ArrayLike, Envelope]] = (),
) -> Liouvillian:
    """Build the Lindblad generator of `H` and `channels`.

    Raises:
        ConfigurationError: non-square or non-Hermitian H, or mismatched dimensions.
    """
    h = np.asarray(H, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigurationError(f"Hamiltonian must be square, got {h.shape}")
    n = h.shape[0]
    scale = max(1.0, float(np.abs(h).max()))
    for name, m in [("H", h)] + [(f"terms[{i}]", np.asarray(t[0])) for i, t in enumerate(terms)]:
        if m.shape != (n, n):
            raise ConfigurationError(f"{name} has shape {m.shape}, expected {(n, n)}")
        if np.abs(m - m.conj().T).max() > 1e-12 * max(scale, float(np.abs(m).max())):
            raise ConfigurationError(f"{name} is not Hermitian")
    for i, ch in enumerate(channels):
        if ch.operator.shape != (n, n):
            raise ConfigurationError(
                f"channel {i} has shape {ch.operator.shape}, expected {(n, n)}"
            )
    h = hermitize(h)
    terms = tuple((hermitize(np.asarray(hk, dtype=complex)), f) for hk, f in terms)
    if n <= DENSE_LIMIT:
        sup = _commutator_super(h) + _dissipator_super(channels, n)
        term_sups = tuple(_commutator_super(hk) for hk, _ in terms)
        return Liouvillian(h, tuple(channels), terms, sup, term_sups)
    return Liouvillian(h, tuple(channels), terms)


# %% [markdown]
# ## Trajectories


# %%
@dataclass(frozen=True, eq=False)
class Trajectory:
    times: NDArray[np.float64]
    states: NDArray[np.complex128]
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.states.shape[0] != self.times.shape[0]:
            raise ConfigurationError("one state per time point is required")
        if self.labels is not None and len(self.labels) != self.states.shape[1]:
            raise ConfigurationError("one label per level is required")
        object.__setattr__(self, "states", _check_states(self.states, guard=False))

    @property
    def populations(self) -> NDArray[np.float64]:
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))

    @property
    def final(self) -> DensityMatrix:
        return DensityMatrix(self.states[-1])

    def indices(self, levels: Sequence[int | str]) -> list[int]:
        out = []
        for level in levels:
            if isinstance(level, int | np.integer):
                out.append(int(level))
            elif self.labels is None:
                raise ConfigurationError("trajectory has no labels to resolve names")
            else:
                out.append(self.labels.index(str(level)))
        return out

    def columns(self, coherences: bool = False) -> list[str]:
        names = self.labels or tuple(str(i) for i in range(self.states.shape[1]))
        cols = ["time_s"] + [f"pop_{name}" for name in names]
        if coherences:
            n = len(names)
            cols += [f"coh_{names[i]}_{names[j]}" for i in range(n) for j in range(i + 1, n)]
        return cols

    def to_csv(self, path: str | Path, coherences: bool = False) -> Path:
        """Columns: time_s, pop_<label>..., then |rho_ij| for i < j when requested."""
        data = [self.times[:, None], self.populations]
        if coherences:
            n = self.states.shape[1]
            iu = np.triu_indices(n, k=1)
            data.append(np.abs(self.states[:, iu[0], iu[1]]))
        buffer = io.StringIO()
        np.savetxt(
            buffer,
            np.hstack(data),
            delimiter=",",
            header=",".join(self.columns(coherences)),
            comments="",
            fmt="%.17g",
        )
        return atomic_write_text(Path(path), buffer.getvalue())


# %%
def _sample_times(duration: float, samples: int | ArrayLike | None) -> NDArray[np.float64]:
    if samples is None:
        samples = 101
    if np.ndim(samples) == 0:
        return np.linspace(0.0, duration, max(int(samples), 2))  # type: ignore[arg-type]
    times = np.asarray(samples, dtype=float)
    if times.min() < 0 or times.max() > duration or np.any(np.diff(times) < 0):
        raise ConfigurationError("sample times must be ascending and within [0, duration]")
    return times


def evolve(
    rho0: DensityMatrix,
    L: Liouvillian,
    duration: float,
    tol: float | None = None,
    samples: int | ArrayLike | None = None,
    labels: Sequence[str] | None = None,
) -> Trajectory:
    """Integrate the master equation with an adaptive 8th-order Runge-Kutta (DOP853).

    Args:
        rho0: Initial state.
        L: Generator; may be time dependent.
        duration: Total time in seconds (>= 0).
        tol: Relative tolerance (default `settings.integrator_rtol`).
        samples: Number of evenly spaced output times, or explicit ascending times.
        labels: Level names carried by the trajectory.

    Raises:
        StiffnessError: the integrator could not complete the step sequence.
        NumericalError: an emitted state needed a trace correction beyond the guard.
    """
    if duration < 0:
        raise ConfigurationError(f"duration must be non-negative, got {duration}")
    if rho0.n != L.dim:
        raise ConfigurationError(f"state has dimension {rho0.n}, Liouvillian {L.dim}")
    labels = tuple(labels) if labels is not None else None
    if duration == 0:
        return Trajectory(np.zeros(1), rho0.matrix[None].copy(), labels)

    times = _sample_times(duration, samples)
    rtol = tol or settings.integrator_rtol
    solution = solve_ivp(
        L.apply,
        (0.0, duration),
        rho0.vec(),
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=settings.integrator_atol,
    )
    if solution.status != 0:
        reached = float(solution.t[-1]) if solution.t.size else 0.0
        raise StiffnessError(
            f"integration failed: {solution.message}",
            reached_s=reached,
            duration_s=duration,
            rtol=rtol,
        )
    n = L.dim
    states = _check_states(solution.y.T.reshape(-1, n, n), guard=True)
    return Trajectory(solution.t.copy(), states, labels)


def propagate(
    rho0: DensityMatrix,
    L: Liouvillian,
    times: ArrayLike,
    labels: Sequence[str] | None = None,
) -> Trajectory:
    """Exact propagation of a time-independent generator with matrix exponentials."""
    if L.time_dependent:
        raise ConfigurationError("propagate needs a time-independent Liouvillian")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.min() < 0 or np.any(np.diff(times) < 0):
        raise ConfigurationError("times must be ascending and non-negative")
    M = L.dense()
    vec = rho0.vec()
    states = np.empty((times.size, L.dim, L.dim), dtype=complex)
    previous, last_step, step = 0.0, None, None
    for k, t in enumerate(times):
        dt = float(t - previous)
        if dt > 0:
            if last_step is None or not np.isclose(dt, last_step, rtol=1e-12, atol=0):
                step, last_step = expm(M * dt), dt
            vec = step @ vec
        states[k] = vec.reshape(L.dim, L.dim)
        previous = float(t)
    states = _check_states(states, guard=True)
    return Trajectory(times.copy(), states, tuple(labels) if labels is not None else None)


# %% [markdown]
# ## Stationary states


# %%
@dataclass(frozen=True, eq=False)
class SteadyState:
    state: DensityMatrix
    degenerate: bool
    null_dimension: int
    residual: float


def steady_state(L: Liouvillian, rcond: float | None = None) -> SteadyState:
    """Stationary state of a time-independent generator.

    Right and left null spaces come from one SVD. For a degenerate null space the
    returned state is the long-time limit of the maximally mixed state, i.e. its
    projection onto the null space along the conserved quantities.

    Raises:
        NumericalError: no null space within `rcond`, or a large residual.
    """
    if L.time_dependent:
        raise ConfigurationError("steady_state needs a time-independent Liouvillian")
    rcond = rcond or settings.steady_state_rcond
    M = L.dense()
    u, s, vh = np.linalg.svd(M)
    k = int(np.count_nonzero(s < rcond * s[0])) if s[0] > 0 else s.size
    if k == 0:
        raise NumericalError(
            "Liouvillian has no null space within tolerance",
            smallest_relative_singular_value=float(s[-1] / s[0]),
            rcond=rcond,
        )
    right = vh[-k:].conj().T
    left = u[:, -k:]
    n = L.dim
    mixed = (np.eye(n, dtype=complex) / n).reshape(-1)
    x = right @ np.linalg.solve(left.conj().T @ right, left.conj().T @ mixed)
    rho = hermitize(x.reshape(n, n))
    rho = rho / np.trace(rho).real
    norm = s[0] if s[0] > 0 else 1.0
    residual = float(np.linalg.norm(M @ rho.reshape(-1)) / norm)
    if residual > 1e-8:
        raise NumericalError("steady state residual too large", residual=residual)
    if k > 1:
        logger.warning(f"Degenerate steady state: null space of dimension {k}")
    return SteadyState(DensityMatrix(rho), k > 1, k, residual)


# %% [markdown]
# ## Fluorescence


# %%
@dataclass(frozen=True)
class Fluorescence:
    photons: float
    empty_window: bool = False


def collection_efficiency(efficiency: float | None = None) -> float:
    """Explicit efficiency, or the constants-table value when None."""
    if efficiency is None:
        return load_constants().angular("collection_efficiency")
    return efficiency


def fluorescence(
    trajectory: Trajectory,
    emitting: Sequence[int | str],
    gamma: float | Sequence[float],
    window: tuple[float, float] | None = None,
    efficiency: float | None = None,
) -> Fluorescence:
    """Expected photon number: efficiency * integral of gamma * P_emitting over `window`."""
    t = trajectory.times
    if window is None:
        window = (float(t[0]), float(t[-1]))
    start, stop = window
    span = max(abs(t[-1]), 1e-300) * 1e-12
    if start < t[0] - span or stop > t[-1] + span:
        raise ConfigurationError(
            f"window {window} outside trajectory span ({t[0]}, {t[-1]})"
        )
    mask = (t >= start - span) & (t <= stop + span)
    if stop <= start or np.count_nonzero(mask) < 2:
        logger.warning(f"Empty fluorescence window {window}")
        return Fluorescence(0.0, empty_window=True)
    idx = trajectory.indices(emitting)
    rates = np.broadcast_to(np.asarray(gamma, dtype=float), (len(idx),))
    signal = trajectory.populations[mask][:, idx] @ rates
    return Fluorescence(float(collection_efficiency(efficiency) * trapezoid(signal, t[mask])))


def segment_operators(
    L: Liouvillian, duration: float
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """(exp(L T), integral_0^T exp(L s) ds) from one block matrix exponential."""
    if L.time_dependent:
        raise ConfigurationError("segment_operators needs a time-independent Liouvillian")
    M = L.dense()
    d = M.shape[0]
    block = np.zeros((2 * d, 2 * d), dtype=complex)
    block[:d, :d] = M
    block[:d, d:] = np.eye(d)
    full = expm(block * duration)
    return full[:d, :d], full[:d, d:]


def emission_functional(rates: ArrayLike) -> NDArray[np.float64]:
    """Row vector r with r . vec(rho) = sum_k rates_k rho_kk."""
    rates = np.asarray(rates, dtype=float)
    n = rates.size
    out = np.zeros(n * n)
    out[np.arange(n) * (n + 1)] = rates
    return out


def photon_functional(
    L: Liouvillian,
    duration: float,
    rates: ArrayLike,
    efficiency: float | None = None,
) -> NDArray[np.complex128]:
    """Row vector w with photons = Re(w . vec(rho0)) over [0, duration]."""
    _, integral = segment_operators(L, duration)
    return collection_efficiency(efficiency) * (emission_functional(rates) @ integral)
