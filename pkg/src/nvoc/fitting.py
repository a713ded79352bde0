"""Fits used to extract oscillation frequencies, decay rates and spectral lines."""

# %% [markdown]
# ## Imports

# %%
import warnings
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import find_peaks

from nvoc.config import settings
from nvoc.errors import ConfigurationError
from nvoc.logger import setup_logging

# %%
logger = setup_logging(__name__, settings.log_level)

Envelope = Literal["exponential", "gaussian"]


# %% [markdown]
# ## Damped cosine
# Model: offset + amplitude * cos(frequency * t + phase) * envelope(decay * t), with the
# envelope exp(-x) or exp(-x^2 / 2). Frequencies and decays are angular (rad/s).


# %%
@dataclass(frozen=True)
class DampedCosineFit:
    frequency: float
    decay: float
    amplitude: float
    phase: float
    offset: float
    envelope: Envelope
    errors: dict[str, float] = field(default_factory=dict)
    r_squared: float = float("nan")
    ok: bool = True
    message: str = ""

    def model(self, t: ArrayLike) -> NDArray[np.float64]:
        return damped_cosine(
            np.asarray(t, dtype=float),
            self.amplitude,
            self.frequency,
            self.phase,
            self.decay,
            self.offset,
            envelope=self.envelope,
        )

    def as_dict(self) -> dict:
        return asdict(self)


def damped_cosine(
    t: NDArray[np.float64],
    amplitude: float,
    frequency: float,
    phase: float,
    decay: float,
    offset: float,
    envelope: Envelope = "exponential",
) -> NDArray[np.float64]:
    x = decay * t
    env = np.exp(-x) if envelope == "exponential" else np.exp(-(x**2) / 2)
    return offset + amplitude * np.cos(frequency * t + phase) * env


def _fft_frequency(t: NDArray[np.float64], y: NDArray[np.float64]) -> float:
    """Angular frequency of the strongest non-DC Fourier component (zero padded)."""
    dt = float(np.mean(np.diff(t)))
    n = 8 * t.size
    spectrum = np.abs(np.fft.rfft(y - y.mean(), n=n))
    freqs = np.fft.rfftfreq(n, d=dt)
    spectrum[0] = 0.0
    return float(2 * np.pi * freqs[int(np.argmax(spectrum))])


def fit_damped_cosine(
    t: ArrayLike,
    y: ArrayLike,
    envelope: Envelope = "exponential",
    frequency_guess: float | None = None,
) -> DampedCosineFit:
    """Least-squares fit of a damped cosine.

    The starting frequency comes from the FFT peak unless given; the phase is started
    from four quadrants and the lowest-cost fit is kept. Non-convergence does not
    raise: the result carries `ok=False` and a message.

    Args:
        t: Sample times (s), ascending and evenly spaced.
        y: Samples.
        envelope: "exponential" or "gaussian".
        frequency_guess: Optional starting angular frequency.

    Returns:
        DampedCosineFit: parameters, one-sigma errors and fit quality.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1 or t.size < 5:
        raise ConfigurationError("damped-cosine fit needs matching 1-D arrays of >= 5 points")
    if envelope not in ("exponential", "gaussian"):
        raise ConfigurationError(f"unknown envelope '{envelope}'")

    span = float(t[-1] - t[0])
    omega0 = frequency_guess or _fft_frequency(t, y)
    offset0 = float(y.mean())
    amp0 = max(float(np.ptp(y)) / 2, 1e-12)
    decay0 = 1.0 / span

    def model(tt, amplitude, frequency, phase, decay, offset):
        return damped_cosine(tt, amplitude, frequency, phase, decay, offset, envelope)

    lower = [0.0, 0.0, -2 * np.pi, 0.0, -np.inf]
    upper = [np.inf, np.inf, 2 * np.pi, np.inf, np.inf]
    best: tuple[float, NDArray, NDArray] | None = None
    failures = []
    for phase0 in (0.0, np.pi / 2, np.pi, -np.pi / 2):
        p0 = [amp0, omega0, phase0, decay0, offset0]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", OptimizeWarning)
                popt, pcov = curve_fit(model, t, y, p0=p0, bounds=(lower, upper), maxfev=20000)
        except (RuntimeError, ValueError, OptimizeWarning) as e:
            failures.append(str(e))
            continue
        cost = float(np.sum((model(t, *popt) - y) ** 2))
        if best is None or cost < best[0]:
            best = (cost, popt, pcov)

    if best is None:
        logger.warning(f"Damped-cosine fit did not converge: {failures[-1]}")
        return DampedCosineFit(
            frequency=omega0,
            decay=decay0,
            amplitude=amp0,
            phase=0.0,
            offset=offset0,
            envelope=envelope,
            ok=False,
            message=failures[-1],
        )

    cost, popt, pcov = best
    names = ("amplitude", "frequency", "phase", "decay", "offset")
    sigma = np.sqrt(np.abs(np.diag(pcov)))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - cost / total if total > 0 else float("nan")
    finite = bool(np.all(np.isfinite(sigma)))
    if not finite:
        logger.warning("Damped-cosine fit has undetermined parameter errors")
    return DampedCosineFit(
        frequency=float(popt[1]),
        decay=float(popt[3]),
        amplitude=float(popt[0]),
        phase=float(popt[2]),
        offset=float(popt[4]),
        envelope=envelope,
        errors={name: float(s) for name, s in zip(names, sigma)},
        r_squared=r2,
        ok=finite,
        message="" if finite else "covariance could not be estimated",
    )


# %% [markdown]
# ## Line through the origin


# %%
@dataclass(frozen=True)
class LineFit:
    slope: float
    slope_error: float
    r_squared: float

    def as_dict(self) -> dict:
        return asdict(self)


def fit_line_through_origin(x: ArrayLike, y: ArrayLike) -> LineFit:
    """y = slope * x; R^2 is the uncentered coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ConfigurationError("line fit needs matching arrays of >= 2 points")
    sxx = float(x @ x)
    if sxx == 0:
        raise ConfigurationError("line fit needs at least one nonzero x")
    slope = float(x @ y) / sxx
    residual = y - slope * x
    ss_res = float(residual @ residual)
    ss_tot = float(y @ y)
    dof = max(x.size - 1, 1)
    return LineFit(
        slope=slope,
        slope_error=float(np.sqrt(ss_res / dof / sxx)),
        r_squared=1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan"),
    )


# %% [markdown]
# ## Peaks


# %%
def find_spectral_peaks(
    x: ArrayLike, y: ArrayLike, relative_prominence: float = 0.0
) -> NDArray[np.float64]:
    """Positions of local maxima whose prominence exceeds a fraction of max(y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    top = float(np.max(y)) if y.size else 0.0
    if top <= 0:
        return np.empty(0)
    indices, _ = find_peaks(y, prominence=relative_prominence * top or None)
    return x[indices]


def find_spectral_minima(
    x: ArrayLike, y: ArrayLike, relative_prominence: float = 0.05
) -> NDArray[np.float64]:
    """Positions of local minima whose depth below the surrounding maxima exceeds a
    fraction of max(y). The depth is measured against the neighbouring shoulders, so a
    dip sampled off its centre still counts."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    top = float(np.max(y)) if y.size else 0.0
    if top <= 0:
        return np.empty(0)
    indices, _ = find_peaks(-y, prominence=relative_prominence * top)
    return x[indices]
