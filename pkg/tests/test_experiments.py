import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nvoc.dynamics import DensityMatrix
from nvoc.errors import ConfigurationError, NumericalError
from nvoc.experiments import (
    IMPERFECTIONS,
    Axis,
    ScanResult,
    extract_dark_lines,
    has_persistent_dark_state,
    jitter_offsets,
    parallel_map,
    pi_pulse_readout,
    pump_segments,
    run_dark_resonance_map,
    run_microwave_rabi,
    run_optical_pumping,
    run_ple_scan,
    run_sequence,
    run_two_photon_rabi,
    step2_polarization,
)
from nvoc.fields import compile_sequence
from nvoc.fitting import find_spectral_peaks
from nvoc.levels import StateLabel, transition_table
from nvoc.schemas import (
    DarkMapConfig,
    FrequencyAxis,
    MicrowaveRabiConfig,
    PleConfig,
    PumpConfig,
    PumpStepsConfig,
    TimeAxis,
    TwoPhotonConfig,
)
from nvoc.utils import point_rng, to_hz

TWO_PI = 2 * math.pi
ZERO, PLUS, MINUS = StateLabel.ZERO, StateLabel.PLUS, StateLabel.MINUS
A2 = StateLabel.A2


class TestScanResult:
    def test_shape_is_checked(self):
        with pytest.raises(ConfigurationError, match="shape"):
            ScanResult("x", (Axis("a", [1.0, 2.0]),), {"y": np.zeros(3)})

    def test_populations_are_checked(self):
        with pytest.raises(NumericalError, match="left"):
            ScanResult(
                "x", (Axis("a", [1.0, 2.0]),), {"p": [0.5, 1.1]}, population_keys=("p",)
            )

    def test_empty_axis(self):
        with pytest.raises(ConfigurationError):
            Axis("a", [])

    def test_csv_rows_follow_the_grid(self):
        result = ScanResult(
            "x",
            (Axis("a", [1.0, 2.0]), Axis("b", [10.0, 20.0, 30.0])),
            {"y": np.arange(6.0).reshape(2, 3)},
        )
        lines = result.to_csv().splitlines()
        assert lines[0] == "a,b,y"
        assert len(lines) == 7
        assert lines[2] == "1,20,1"
        assert lines[4] == "2,10,3"

    def test_fits_json_is_plain(self):
        result = ScanResult("x", (Axis("a", [1.0]),), {"y": [0.0]}, fits={"v": np.float64(2)})
        assert result.fits_json().strip() == '{\n  "v": 2.0\n}'


class TestExecution:
    def test_parallel_map_keeps_order(self):
        tasks = [-3, 1, -2, 5, 0]
        assert parallel_map(abs, tasks, workers=2) == [abs(t) for t in tasks]
        assert parallel_map(abs, tasks, workers=1) == [abs(t) for t in tasks]

    def test_point_streams_do_not_depend_on_order(self):
        first = [jitter_offsets(point_rng(7, k), 16, 1.0) for k in range(3)]
        again = [jitter_offsets(point_rng(7, k), 16, 1.0) for k in reversed(range(3))]
        for a, b in zip(first, reversed(again)):
            assert_allclose(a, b)

    def test_jitter_is_stratified(self):
        offsets = jitter_offsets(np.random.default_rng(1), 400, 2.0)
        assert_allclose(offsets.mean(), 0.0, atol=0.05)
        assert_allclose(offsets.std(), 2.0, rtol=0.05)
        assert not np.any(jitter_offsets(np.random.default_rng(1), 1, 2.0))

    def test_segments_run_back_to_back(self, ideal_model):
        segments = pump_segments(
            np.array([0, 1], dtype=complex),
            PumpStepsConfig(step1_duration_s=50e-9, step2_duration_s=20e-9, settle_s=10e-9),
        )
        compiled = compile_sequence(segments, ideal_model)
        trajectory = run_sequence(DensityMatrix.basis(9, 0), compiled, samples=6)
        assert trajectory.times.size == 6 + 5 + 5
        assert_allclose(trajectory.times[-1], 80e-9)
        assert np.all(np.diff(trajectory.times) > 0)


class TestReadout:
    def test_pi_pulse_reads_one_spin(self, nv_model):
        readout = pi_pulse_readout(nv_model, TWO_PI * 100e6, "sigma-")
        assert readout.ground == PLUS
        plus = readout.photons(DensityMatrix.basis(9, nv_model.index(PLUS)))
        minus = readout.photons(DensityMatrix.basis(9, nv_model.index(MINUS)))
        assert plus > 0.5
        assert plus > 10 * minus

    def test_photons_of_a_stack(self, nv_model):
        readout = pi_pulse_readout(nv_model, TWO_PI * 100e6, "sigma+")
        assert readout.ground == MINUS
        stack = np.stack([DensityMatrix.basis(9, i).matrix for i in range(3)])
        assert readout.photons(stack).shape == (3,)

    def test_unreachable_polarization(self, nv_model):
        with pytest.raises(ConfigurationError):
            pi_pulse_readout(nv_model, TWO_PI * 100e6, "pi")


class TestPumpingSetup:
    def test_extinction_keeps_polarization_normalized(self):
        eps = step2_polarization(np.array([0.6, 0.8j]), extinction=0.05)
        assert_allclose(np.linalg.norm(eps), 1.0)

    def test_segments(self):
        segments = pump_segments(np.array([0, 1], dtype=complex), PumpStepsConfig())
        assert [s.label for s in segments] == ["pump 0 -> Ex", "pump +-1 -> A2", "settle"]
        assert segments[1].drives[0].transition == (PLUS, A2)
        target = np.array([0, 1], dtype=complex)
        alone = pump_segments(target, PumpStepsConfig(), include_step2=False)
        assert len(alone) == 2


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.0, 1.0),
    st.floats(0.0, 2 * math.pi),
)
def test_step2_leaves_target_dark(mix, phase):
    """The step-2 polarization has no amplitude from the target onto A2."""
    target = np.array([math.sqrt(1 - mix), math.sqrt(mix) * np.exp(1j * phase)])
    eps = step2_polarization(target)
    d_plus = np.array([0, 1 / math.sqrt(2), 0])
    d_minus = np.array([1 / math.sqrt(2), 0, 0])
    amplitude = (eps @ d_plus) * target[0] + (eps @ d_minus) * target[1]
    assert abs(amplitude) < 1e-12


class TestDarkLineExtraction:
    def test_two_vertical_lines(self):
        detunings = np.linspace(-40e6, 40e6, 5)
        modulations = np.linspace(-30e6, 30e6, 61)
        excited = np.ones((5, 61))
        excited[:, 21] = 0.0
        excited[:, 39] = 0.0
        excited[2, 22] = 1e-5
        lines = extract_dark_lines(detunings, modulations, excited)
        assert len(lines) == 2
        assert_allclose([line.position_hz for line in lines], [-9e6, 9e6], atol=0.3e6)
        assert all(line.rows == 5 for line in lines)

    def test_no_minima(self):
        assert extract_dark_lines(np.zeros(2), np.arange(5.0), np.ones((2, 5))) == []

    def test_shallow_off_grid_dips(self):
        modulations = np.linspace(-30e6, 30e6, 60)
        row = 0.1 * np.ones(60)
        row[[20, 39]] = 0.002
        row[[19, 21, 38, 40]] = 0.05
        detunings = np.array([-20e6, 0.0, 20e6])
        lines = extract_dark_lines(detunings, modulations, np.tile(row, (3, 1)))
        assert len(lines) == 2
        assert_allclose([line.position_hz for line in lines], modulations[[20, 39]])

    def test_minima_that_move_with_detuning_are_dropped(self):
        detunings = np.linspace(-40e6, 40e6, 5)
        modulations = np.linspace(-30e6, 30e6, 61)
        excited = np.ones((5, 61))
        excited[:, 21] = 0.0
        for row, column in enumerate(range(30, 55, 5)):
            excited[row, column] = 0.5
        (line,) = extract_dark_lines(detunings, modulations, excited)
        assert_allclose(line.position_hz, modulations[21])
        assert line.rows == 5

    @pytest.mark.parametrize(
        "changes, persistent",
        [
            ({}, False),
            ({"zeeman_hz": 0.0}, True),
            ({"omega_plus_hz": 0.0}, True),
            ({"zeeman_hz": 0.0, "ground_mixing_per_s": 1e4}, False),
            ({"zeeman_hz": 0.0, "ground_dephasing_per_s": 1e4}, False),
        ],
    )
    def test_persistent_dark_state(self, changes, persistent):
        assert has_persistent_dark_state(DarkMapConfig(**changes)) is persistent


class TestPleSetup:
    def test_ple_without_laser_is_dark(self):
        config = PleConfig(
            rabi_hz=0.0, laser=FrequencyAxis(start_hz=-1e9, stop_hz=1e9, points=11)
        )
        result = run_ple_scan(config, workers=1)
        assert not np.any(result.observables["fluorescence"])
        assert result.fits["peaks_hz"].size == 0

    def test_fine_scan_resolves_every_line(self, model_config):
        config = PleConfig(laser=FrequencyAxis(start_hz=0.0, stop_hz=1e6, points=2))
        fits = run_ple_scan(config, workers=1).fits
        table = transition_table(model_config.ground_params(), model_config.excited_params())
        assert len(fits["lines_hz"]) == len(table.lines()) == 12
        assert fits["peaks_hz"].size == 0
        assert fits["unmatched_lines_hz"] == []
        assert_allclose(fits["line_peaks_hz"], fits["lines_hz"], atol=fits["fine_step_hz"])

    def test_without_fine_scan_far_lines_stay_unmatched(self):
        config = PleConfig(
            laser=FrequencyAxis(start_hz=0.0, stop_hz=1e6, points=2), refine_points_per_side=0
        )
        fits = run_ple_scan(config, workers=1).fits
        assert fits["line_peaks_hz"] == [None] * len(fits["lines_hz"])
        assert_allclose(fits["unmatched_lines_hz"], fits["lines_hz"])


@pytest.mark.slow
class TestRecipes:
    def test_optical_pumping(self):
        result = run_optical_pumping(PumpConfig(), workers=1)
        assert result.fidelity > 0.8
        assert result.ideal_fidelity > 0.95
        assert set(result.attribution) == set(IMPERFECTIONS)
        assert_allclose(result.populations.sum(), 1.0, atol=1e-9)
        scan = result.to_scan_result()
        assert scan.fits["fidelity"] == result.fidelity

    def test_pumping_into_a_superposition(self):
        config = PumpConfig(target="superposition", attribution=False, off_resonant=False)
        result = run_optical_pumping(config, workers=1)
        assert result.fidelity > 0.8
        assert result.attribution == {}

    def test_pumping_is_symmetric_in_the_target_spin(self):
        results = {
            target: run_optical_pumping(
                PumpConfig(target=target, imperfect_selection=False, attribution=False),
                workers=1,
            )
            for target in ("+1", "-1")
        }
        assert_allclose(results["+1"].fidelity, results["-1"].fidelity, atol=0.01)
        plus = results["+1"].populations
        assert plus[results["+1"].labels.index(PLUS)] > 0.8

    def test_microwave_rabi(self):
        result = run_microwave_rabi(MicrowaveRabiConfig())
        fits = result.fits
        assert fits["readout_ground"] == "+1"
        assert fits["contrast_a2"] > 0.5
        assert fits["correlation"] < -0.5
        assert_allclose(fits["fit_a2"]["frequency_hz"], 5e6, rtol=0.05)

    def test_dark_resonance_map(self):
        config = DarkMapConfig()
        result = run_dark_resonance_map(config, workers=2)
        step = result.fits["grid_step_hz"]
        lines = result.fits["dark_lines"]
        assert result.fits["observable"] == "steady_state"
        assert len(lines) == 2
        low, high = sorted(line["position_hz"] for line in lines)
        assert abs(low - (config.zfs_hz - 9e6)) <= step
        assert abs(high - (config.zfs_hz + 9e6)) <= step
        assert_allclose(high - low, 18e6, atol=1e6)
        assert all(abs(line["slope"]) < 0.01 for line in lines)
        assert all(line["rows"] > 30 for line in lines)
        assert result.observables["excited_population"].shape == (61, 61)

    def test_dark_lines_between_grid_points(self):
        config = DarkMapConfig(
            detuning=FrequencyAxis(start_hz=-20e6, stop_hz=20e6, points=3),
            modulation_offset=FrequencyAxis(start_hz=-30e6, stop_hz=30e6, points=60),
        )
        result = run_dark_resonance_map(config, workers=1)
        step = result.fits["grid_step_hz"]
        positions = sorted(line["position_hz"] for line in result.fits["dark_lines"])
        assert len(positions) == 2
        expected = result.fits["expected_positions_hz"]
        assert_allclose(expected, [config.zfs_hz - 9e6, config.zfs_hz + 9e6])
        assert np.all(np.abs(np.subtract(positions, expected)) <= step)

    def test_no_zeeman_splitting_gives_one_dark_line(self):
        config = DarkMapConfig(
            zeeman_hz=0.0, detuning=FrequencyAxis(start_hz=-40e6, stop_hz=40e6, points=5)
        )
        result = run_dark_resonance_map(config, workers=1)
        assert result.fits["observable"] == "time_resolved"
        (line,) = result.fits["dark_lines"]
        assert abs(line["position_hz"] - config.zfs_hz) <= result.fits["grid_step_hz"]
        assert line["rows"] == 5

    def test_far_detuned_sideband_shows_the_zero_line(self):
        config = DarkMapConfig(
            omega_0_hz=1e6,
            ground_mixing_per_s=1e6,
            modulation_offset=FrequencyAxis(start_hz=1e9, stop_hz=1.002e9, points=3),
        )
        result = run_dark_resonance_map(config, workers=1)
        detunings = result.axes[0].values
        step = detunings[1] - detunings[0]
        excited = result.observables["excited_population"]
        for column in excited.T:
            (peak,) = find_spectral_peaks(detunings, column, 0.1)
            assert abs(peak) <= step
        assert result.fits["dark_lines"] == []

    def test_two_photon_rate(self):
        config = TwoPhotonConfig(
            model_kind="four_level",
            powers_w=[46e-6],
            jitter_samples=1,
            detuning_uncertainty_hz=0.0,
        )
        result = run_two_photon_rabi(config, workers=1)
        (point,) = result.fits["points"]
        assert_allclose(point["analytic_rabi_hz"], 2.63e6, rtol=0.01)
        assert_allclose(point["frequency_hz"], point["analytic_rabi_hz"], rtol=0.05)
        assert point["adiabaticity"] < 0.1
        assert result.fits["envelope"] == "exponential"

    @pytest.mark.parametrize("power_w", [12e-6, 46e-6])
    @pytest.mark.parametrize("detuning_hz", [3e9, 6e9])
    def test_two_photon_rate_over_power_and_detuning(self, power_w, detuning_hz):
        config = TwoPhotonConfig(
            model_kind="four_level",
            detuning_hz=detuning_hz,
            powers_w=[power_w],
            times=TimeAxis(stop_s=5e-6, points=501),
            jitter_samples=1,
            detuning_uncertainty_hz=0.0,
        )
        (point,) = run_two_photon_rabi(config, workers=1).fits["points"]
        assert_allclose(point["frequency_hz"], point["analytic_rabi_hz"], rtol=0.05)
        single = point["analytic_rabi_single_hz"]
        assert abs(point["frequency_hz"] - single) / single > 0.03

    def test_two_photon_decay_and_recovery(self):
        config = TwoPhotonConfig(
            model_kind="four_level",
            rabi_per_sqrt_w_hz=1.668e11,
            detuning_hz=6e9,
            powers_w=[12e-6, 23e-6, 46e-6],
            times=TimeAxis(stop_s=1.5e-6, points=301),
            jitter_samples=200,
            seed=3,
        )
        result = run_two_photon_rabi(config, workers=2)
        fits = result.fits
        assert fits["envelope"] == "gaussian"
        middle = fits["points"][1]
        assert_allclose(middle["analytic_rabi_hz"], 2.32e6, rtol=0.01)
        assert_allclose(middle["analytic_decay_hz"], 313e3, rtol=0.01)
        for point in fits["points"]:
            assert_allclose(point["frequency_hz"], point["analytic_rabi_hz"], rtol=0.05)
            assert_allclose(point["decay_hz"], point["analytic_decay_hz"], rtol=0.15)
            assert_allclose(point["final_signal"], 1.0, atol=0.02)
        assert fits["rabi_vs_power"]["r_squared"] > 0.999
        assert fits["decay_vs_power"]["r_squared"] > 0.999
        assert_allclose(fits["recovered_rabi_per_sqrt_w_hz"], 1.668e11, rtol=0.05)
        assert_allclose(fits["recovered_detuning_uncertainty_hz"], 4.9e8, rtol=0.15)

    def test_two_photon_is_reproducible(self):
        config = TwoPhotonConfig(
            model_kind="four_level",
            powers_w=[23e-6, 46e-6],
            times=TimeAxis(stop_s=1e-6, points=51),
            jitter_samples=8,
            seed=11,
        )
        serial = run_two_photon_rabi(config, workers=1)
        parallel = run_two_photon_rabi(config, workers=2)
        assert_allclose(serial.observables["signal"], parallel.observables["signal"], atol=1e-12)

    def test_ple_resolves_every_line(self, model_config):
        result = run_ple_scan(PleConfig(), workers=2)
        peaks = np.asarray(result.fits["peaks_hz"])
        step = result.fits["step_hz"]
        table = transition_table(model_config.ground_params(), model_config.excited_params())
        for ground, excited in [(ZERO, StateLabel.EX), (ZERO, StateLabel.EY), (PLUS, A2)]:
            line = to_hz(table.lookup(ground, excited).frequency)
            assert np.min(np.abs(peaks - line)) <= step
        assert len(result.fits["lines_hz"]) == len(table.lines()) == 12
        assert result.fits["unmatched_lines_hz"] == []
        assert {"fluorescence", "fluorescence_x", "fluorescence_y"} <= set(result.observables)

    def test_ple_without_microwave_shows_only_zero_lines(self, model_config):
        config = PleConfig(
            mode="integrated",
            polarization="x",
            microwave_mixing_per_s=0.0,
            step_hz=20e6,
            peak_prominence=0.05,
        )
        result = run_ple_scan(config, workers=1)
        peaks = np.asarray(result.fits["peaks_hz"])
        step = result.fits["step_hz"]
        table = transition_table(model_config.ground_params(), model_config.excited_params())
        zero_lines = np.array(
            [to_hz(t.frequency) for t in table.transitions if t.ground == ZERO]
        )
        assert peaks.size > 0
        for peak in peaks:
            assert np.min(np.abs(zero_lines - peak)) <= 2 * step
