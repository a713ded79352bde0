import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nvoc.analytics import optical_bloch_population
from nvoc.dynamics import (
    CollapseChannel,
    DensityMatrix,
    Trajectory,
    emission_functional,
    evolve,
    fluorescence,
    liouvillian,
    photon_functional,
    propagate,
    segment_operators,
    steady_state,
)
from nvoc.errors import ConfigurationError

TWO_PI = 2 * math.pi


def two_level(rabi: float, detuning: float = 0.0) -> np.ndarray:
    """Ground 0, excited 1; the drive element is -rabi/2."""
    return np.array([[0.0, -rabi / 2], [-rabi / 2, -detuning]], dtype=complex)


class TestDensityMatrix:
    def test_constructors(self):
        assert_allclose(DensityMatrix.basis(3, 1).populations, [0, 1, 0])
        assert_allclose(DensityMatrix.mixed(4).purity, 0.25)
        assert_allclose(DensityMatrix.from_populations([2, 1, 1]).populations, [0.5, 0.25, 0.25])
        assert_allclose(DensityMatrix.pure([1, 1j]).matrix, [[0.5, -0.5j], [0.5j, 0.5]])

    def test_rejects_bad_states(self):
        with pytest.raises(ConfigurationError, match="Hermitian"):
            DensityMatrix(np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex))
        with pytest.raises(ConfigurationError, match="trace"):
            DensityMatrix(np.eye(2, dtype=complex))
        with pytest.raises(ConfigurationError, match="positive"):
            DensityMatrix(np.diag([1.5, -0.5]).astype(complex))

    def test_vectorization_is_row_major(self):
        rho = DensityMatrix.pure([1, 2j])
        assert_allclose(rho.vec(), rho.matrix.reshape(-1))


class TestLiouvillian:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ConfigurationError, match="Hermitian"):
            liouvillian(np.array([[0, 1], [0, 0]], dtype=complex))

    def test_rejects_mismatched_channel(self):
        with pytest.raises(ConfigurationError, match="channel"):
            liouvillian(np.zeros((2, 2)), [CollapseChannel.decay(3, 1, 0, 1.0)])

    def test_negative_rate(self):
        with pytest.raises(ConfigurationError):
            CollapseChannel.decay(2, 1, 0, -1.0)

    def test_mixing_is_symmetric(self):
        up, down = CollapseChannel.mixing(3, 0, 2, 5.0)
        assert up.operator[2, 0] == 1 and down.operator[0, 2] == 1
        assert up.rate == down.rate == 5.0


class TestEvolution:
    def test_resonant_rabi(self):
        rabi = TWO_PI * 10e6
        L = liouvillian(two_level(rabi))
        times = np.linspace(0, 200e-9, 41)
        trajectory = propagate(DensityMatrix.basis(2, 0), L, times)
        assert_allclose(trajectory.populations[:, 1], np.sin(rabi * times / 2) ** 2, atol=1e-10)

    def test_integrator_matches_exponential(self):
        gamma = 1 / 12e-9
        channels = [CollapseChannel.decay(2, 1, 0, gamma)]
        L = liouvillian(two_level(TWO_PI * 30e6, TWO_PI * 5e6), channels)
        times = np.linspace(0, 100e-9, 21)
        exact = propagate(DensityMatrix.basis(2, 0), L, times)
        integrated = evolve(DensityMatrix.basis(2, 0), L, 100e-9, samples=times)
        assert_allclose(integrated.states, exact.states, atol=1e-7)

    def test_zero_duration(self):
        trajectory = evolve(DensityMatrix.basis(2, 0), liouvillian(np.zeros((2, 2))), 0.0)
        assert trajectory.times.tolist() == [0.0]

    def test_time_dependent_term(self):
        rabi = TWO_PI * 10e6
        drive = two_level(rabi)
        L = liouvillian(np.zeros((2, 2)), terms=[(drive, lambda t: 1.0)])
        assert L.time_dependent
        with pytest.raises(ConfigurationError):
            propagate(DensityMatrix.basis(2, 0), L, [0.0, 1e-9])
        trajectory = evolve(DensityMatrix.basis(2, 0), L, 50e-9, samples=11)
        assert_allclose(
            trajectory.populations[:, 1], np.sin(rabi * trajectory.times / 2) ** 2, atol=1e-7
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            evolve(DensityMatrix.basis(3, 0), liouvillian(np.zeros((2, 2))), 1e-9)


class TestSteadyState:
    @pytest.mark.parametrize("detuning_mhz", [0.0, 7.0, -20.0])
    def test_two_level_matches_closed_form(self, detuning_mhz):
        rabi, gamma, detuning = TWO_PI * 15e6, 1 / 12e-9, TWO_PI * detuning_mhz * 1e6
        L = liouvillian(two_level(rabi, detuning), [CollapseChannel.decay(2, 1, 0, gamma)])
        result = steady_state(L)
        assert not result.degenerate
        assert_allclose(
            result.state.populations[1],
            optical_bloch_population(rabi, detuning, gamma),
            rtol=1e-7,
        )

    def test_degenerate_null_space(self):
        result = steady_state(liouvillian(np.zeros((2, 2))))
        assert result.degenerate
        assert result.null_dimension == 4
        assert_allclose(result.state.populations, [0.5, 0.5])


class TestFluorescence:
    def test_photon_functional_matches_integrated_trajectory(self):
        gamma = 1 / 12e-9
        L = liouvillian(two_level(TWO_PI * 20e6), [CollapseChannel.decay(2, 1, 0, gamma)])
        rho0 = DensityMatrix.basis(2, 0)
        trajectory = propagate(rho0, L, np.linspace(0, 200e-9, 4001))
        counted = fluorescence(trajectory, [1], gamma, efficiency=1.0).photons
        w = photon_functional(L, 200e-9, [0.0, gamma], efficiency=1.0)
        assert_allclose(np.real(w @ rho0.vec()), counted, rtol=1e-5)

    def test_segment_operators_of_pure_decay(self):
        gamma = 1e7
        L = liouvillian(np.zeros((2, 2)), [CollapseChannel.decay(2, 1, 0, gamma)])
        step, integral = segment_operators(L, 1e-7)
        rho1 = DensityMatrix.basis(2, 1).vec()
        assert_allclose((step @ rho1).reshape(2, 2)[1, 1], np.exp(-1.0))
        emitted = emission_functional([0.0, gamma]) @ integral @ rho1
        assert_allclose(np.real(emitted), 1 - np.exp(-1.0))

    def test_empty_window(self):
        states = np.stack([np.eye(2) / 2] * 2).astype(complex)
        trajectory = Trajectory(np.array([0.0, 1.0]), states)
        result = fluorescence(trajectory, [1], 1.0, window=(0.5, 0.5))
        assert result.empty_window and result.photons == 0.0


class TestTrajectory:
    def test_csv(self, tmp_path):
        rho = DensityMatrix.pure([1, 1]).matrix
        trajectory = Trajectory(np.array([0.0, 1e-9]), np.stack([rho, rho]), ("g", "e"))
        path = trajectory.to_csv(tmp_path / "t.csv", coherences=True)
        lines = path.read_text().splitlines()
        assert lines[0] == "time_s,pop_g,pop_e,coh_g_e"
        assert len(lines) == 3


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-50e6, 50e6), min_size=6, max_size=6),
    st.lists(st.floats(0.0, 1e8), min_size=3, max_size=3),
    st.floats(1e-9, 1e-6),
)
def test_trajectories_stay_physical(h_hz, rates, duration):
    """Random three-level Lindblad evolution keeps trace, Hermiticity and positivity."""
    a, b, c, d, e, f = (TWO_PI * v for v in h_hz)
    h = np.array([[a, d + 1j * e, 0], [d - 1j * e, b, f], [0, f, c]], dtype=complex)
    channels = [
        CollapseChannel.decay(3, 2, 0, rates[0]),
        CollapseChannel.decay(3, 1, 0, rates[1]),
        CollapseChannel.dephasing(3, 1, rates[2]),
    ]
    L = liouvillian(h, channels)
    trajectory = propagate(DensityMatrix.mixed(3), L, np.linspace(0, duration, 11))
    for state in trajectory.states:
        assert_allclose(np.trace(state).real, 1.0, atol=1e-9)
        assert_allclose(state, state.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(state).min() > -1e-9
