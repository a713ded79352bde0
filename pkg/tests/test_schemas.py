import math
import re

import numpy as np
import pytest
from numpy.testing import assert_allclose

from nvoc.errors import ConfigurationError
from nvoc.levels import StateLabel, a1_a2_gap
from nvoc.schemas import (
    RECIPES,
    DarkMapConfig,
    FrequencyAxis,
    ModelConfig,
    PleConfig,
    PumpConfig,
    SequenceFile,
    TimeAxis,
    TwoPhotonConfig,
    load_model_file,
    parse_model,
)

TWO_PI = 2 * math.pi


class TestValidation:
    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigurationError, match="unknown key 'colour'"):
            parse_model(PleConfig, {"colour": "red"})

    def test_nested_unknown_key(self):
        with pytest.raises(ConfigurationError, match="model.spin: unknown key 'spin'"):
            parse_model(PumpConfig, {"model": {"spin": 1}})

    def test_source_prefix(self, write_json):
        path = write_json({"zeeman_hz": -1.0})
        with pytest.raises(ConfigurationError, match=re.escape(str(path))):
            load_model_file(DarkMapConfig, path)

    def test_bad_polarization(self):
        with pytest.raises(ConfigurationError, match="unknown polarization"):
            parse_model(TwoPhotonConfig, {"polarization": "circular"})

    def test_negative_power(self):
        with pytest.raises(ConfigurationError, match="positive"):
            parse_model(TwoPhotonConfig, {"powers_w": [1e-6, -1e-6]})

    def test_time_axis_ordering(self):
        with pytest.raises(ConfigurationError):
            parse_model(TimeAxis, {"start_s": 2e-6, "stop_s": 1e-6})

    def test_calibrated_strain_rejects_explicit_values(self):
        with pytest.raises(ConfigurationError, match="explicit"):
            parse_model(ModelConfig, {"strain_x_hz": 1e9})


@pytest.mark.parametrize("recipe", sorted(RECIPES))
def test_dump_and_reload_is_exact(recipe, sequence_data):
    cls = RECIPES[recipe]
    data = sequence_data if recipe == "simulate" else {}
    config = parse_model(cls, data)
    reloaded = parse_model(cls, config.model_dump(mode="json"))
    assert reloaded == config


class TestAxes:
    def test_frequency_axis(self):
        axis = FrequencyAxis(start_hz=-30e6, stop_hz=30e6, points=61)
        assert_allclose(axis.step_hz, 1e6)
        assert axis.values().size == 61

    def test_time_axis_units(self):
        axis = parse_model(TimeAxis, {"stop_s": {"value": 1.5, "unit": "us"}, "points": 301})
        assert_allclose(axis.values()[-1], 1.5e-6)


class TestModelConfig:
    def test_calibrated_gap(self, model_config):
        assert_allclose(a1_a2_gap(model_config.excited_params()), TWO_PI * 3.2e9, rtol=1e-6)

    def test_explicit_strain(self):
        config = ModelConfig(strain="explicit", strain_x_hz=1e9)
        assert_allclose(config.excited_params().strain_x, TWO_PI * 1e9)

    def test_branching_override(self):
        config = ModelConfig(branching={StateLabel.A2: (0.0, 0.5, 0.5)})
        decay = config.decay_params()
        assert decay.branching[StateLabel.A2] == (0.0, 0.5, 0.5)
        assert decay.branching[StateLabel.EX] == (0.98, 0.01, 0.01)


class TestSequenceFile:
    def test_initial_normalized(self, sequence_data, nv_model):
        sequence_data["initial"] = {"+1": 1.0, "-1": 3.0}
        parsed = parse_model(SequenceFile, sequence_data)
        p = parsed.initial_populations(nv_model)
        assert_allclose(p[nv_model.index(StateLabel.MINUS)], 0.75)

    def test_negative_initial(self, sequence_data):
        sequence_data["initial"] = {"0": 1.0, "+1": -0.5}
        with pytest.raises(ConfigurationError, match="non-negative"):
            parse_model(SequenceFile, sequence_data)

    def test_needs_segments(self, sequence_data):
        sequence_data["segments"] = []
        with pytest.raises(ConfigurationError, match="segments"):
            parse_model(SequenceFile, sequence_data)

    def test_modulation_adds_sideband_pair(self, sequence_data, nv_model):
        sequence_data["segments"][0]["drives"][0]["modulation_hz"] = 2.88e9
        parsed = parse_model(SequenceFile, sequence_data)
        drive = parsed.segments_for(nv_model)[0].drives[0]
        offsets = sorted(s.offset for s in drive.sidebands)
        assert_allclose(offsets, [-TWO_PI * 2.88e9, TWO_PI * 2.88e9])

    def test_dephasing_and_mixing_channels(self, sequence_data, nv_model):
        sequence_data["segments"][1]["dephasing"] = [{"level": "+1", "rate_per_s": 1e5}]
        sequence_data["segments"][1]["mixing"] = [{"levels": ["+1", "-1"], "rate_per_s": 1e5}]
        segment = parse_model(SequenceFile, sequence_data).segments_for(nv_model)[1]
        assert len(segment.channels) == 3


class TestRecipes:
    def test_pump_superposition_is_normalized(self):
        config = PumpConfig(target="superposition", superposition=(1.0, 2.0))
        v = config.target_vector()
        assert_allclose(np.linalg.norm(v), 1.0)
        assert_allclose(np.abs(v) ** 2, [0.2, 0.8])

    def test_pump_superposition_needs_amplitude(self):
        with pytest.raises(ConfigurationError, match="both zero"):
            parse_model(PumpConfig, {"target": "superposition", "superposition": [0, 0]})

    def test_two_photon_rabi_scales_with_root_power(self):
        config = TwoPhotonConfig()
        assert_allclose(config.rabi(46e-6), TWO_PI * 5.9e10 * math.sqrt(46e-6))
        assert_allclose(config.rabi(4 * 46e-6), 2 * config.rabi(46e-6))

    def test_dark_map_defaults(self):
        config = DarkMapConfig()
        p = config.tripod_params(0.0, config.zfs_hz)
        assert_allclose(p.zeeman_delta, TWO_PI * 18e6)
        assert_allclose(p.zfs, TWO_PI * 2.88e9)
        assert_allclose(config.modulation_hz()[[0, -1]], [2.85e9, 2.91e9])

    def test_dark_map_branching(self):
        config = DarkMapConfig(branching=(0.0, 1.0, 0.0))
        assert config.decay_params().branching[StateLabel.A2] == (0.0, 1.0, 0.0)

    def test_ple_accepts_unpolarized(self):
        assert PleConfig().polarization == "unpolarized"
        with pytest.raises(ConfigurationError):
            parse_model(PleConfig, {"polarization": "circular"})
