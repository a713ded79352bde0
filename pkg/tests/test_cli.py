import json
import math

import pytest

from nvoc.cli import RESULT_FILES, constants_lines, load_config, run
from nvoc.errors import ConfigurationError
from nvoc.main import main, parse_arguments
from nvoc.schemas import SequenceFile


class TestLoadConfig:
    def test_unknown_key(self, write_json):
        path = write_json({"segments": [{"duration_s": 1e-9}], "colour": "red"})
        with pytest.raises(ConfigurationError, match="unknown key 'colour'"):
            load_config(path, "simulate")

    def test_unknown_subcommand(self, sequence_file):
        with pytest.raises(ConfigurationError, match="unknown subcommand"):
            load_config(sequence_file, "teleport")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="file not found"):
            load_config(tmp_path / "absent.json", "darkmap")

    def test_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError, match="parse error"):
            load_config(path, "darkmap")

    def test_values_stay_in_hz_until_built(self, write_json):
        path = write_json({"zeeman_hz": {"value": 18, "unit": "MHz"}, "omega_0_hz": 2e6})
        config = load_config(path, "darkmap")
        assert config.zeeman_hz == pytest.approx(18e6)
        assert config.omega_0_hz == 2e6
        params = config.tripod_params(0.0, config.zfs_hz)
        assert params.zeeman_delta == pytest.approx(2 * math.pi * 18e6)
        assert params.omega_0 == pytest.approx(2 * math.pi * 2e6)


class TestRun:
    def test_simulate_writes_result_directory(self, sequence_file, tmp_path):
        out = tmp_path / "out"
        config = load_config(sequence_file, "simulate")
        assert run("simulate", config, out, workers=1) == 0
        assert all((out / name).exists() for name in RESULT_FILES)
        assert not (out / "error.json").exists()

        meta = json.loads((out / "meta.json").read_text())
        assert meta["recipe"] == "simulate"
        assert len(meta["config_hash"]) == 64
        int(meta["config_hash"], 16)
        assert meta["constants_version"] == "1.0.0"

        header, *rows = (out / "result.csv").read_text().splitlines()
        assert header.startswith("time_s,pop_0,pop_+1")
        assert len(rows) == 11 + 10

        fits = json.loads((out / "fits.json").read_text())
        assert fits["segments"] == ["excite", "wait"]

    def test_config_round_trip(self, sequence_file, tmp_path):
        out = tmp_path / "out"
        config = load_config(sequence_file, "simulate")
        run("simulate", config, out, workers=1)
        assert load_config(out / "config.json", "simulate") == config

    def test_rerun_is_byte_identical(self, sequence_file, tmp_path):
        config = load_config(sequence_file, "simulate")
        run("simulate", config, tmp_path / "a", workers=1)
        run("simulate", config, tmp_path / "b", workers=1)
        for name in ("result.csv", "fits.json", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        meta_a = json.loads((tmp_path / "a" / "meta.json").read_text())
        meta_b = json.loads((tmp_path / "b" / "meta.json").read_text())
        assert meta_a["config_hash"] == meta_b["config_hash"]

    def test_hash_follows_the_config(self, sequence_data, tmp_path):
        first = SequenceFile.model_validate(sequence_data)
        sequence_data["samples_per_segment"] = 12
        second = SequenceFile.model_validate(sequence_data)
        run("simulate", first, tmp_path / "a", workers=1)
        run("simulate", second, tmp_path / "b", workers=1)
        hashes = [
            json.loads((tmp_path / d / "meta.json").read_text())["config_hash"] for d in "ab"
        ]
        assert hashes[0] != hashes[1]

    def test_dry_run_writes_nothing(self, sequence_file, tmp_path, capsys):
        out = tmp_path / "out"
        config = load_config(sequence_file, "simulate")
        assert run("simulate", config, out, dry_run=True) == 0
        assert not out.exists()
        printed = capsys.readouterr().out
        assert "simulate: configuration valid" in printed
        assert "segment 'excite'" in printed

    def test_compilation_error_is_reported(self, sequence_data, tmp_path):
        sequence_data["model"] = {"pure_selection": True}
        sequence_data["segments"][0]["drives"][0] = {
            "transition": ["+1", "A2"],
            "rabi_hz": 20e6,
            "polarization": "sigma+",
        }
        config = SequenceFile.model_validate(sequence_data)
        out = tmp_path / "out"
        assert run("simulate", config, out, workers=1) == 1
        error = json.loads((out / "error.json").read_text())
        assert error["error"] == "CompilationError"
        assert "no overlap" in error["message"]
        assert not any((out / name).exists() for name in RESULT_FILES)

    def test_darkmap_recipe(self, write_json, tmp_path):
        path = write_json(
            {
                "detuning": {"start_hz": -10e6, "stop_hz": 10e6, "points": 2},
                "modulation_offset": {"start_hz": -12e6, "stop_hz": 12e6, "points": 25},
            }
        )
        out = tmp_path / "out"
        assert run("darkmap", load_config(path, "darkmap"), out, workers=1) == 0
        header, *rows = (out / "result.csv").read_text().splitlines()
        assert header == "detuning_hz,modulation_hz,excited_population"
        assert len(rows) == 50
        fits = json.loads((out / "fits.json").read_text())
        assert len(fits["dark_lines"]) == 2


class TestMain:
    def test_version(self, capsys):
        assert main(["version"]) == 0
        assert "constants 1.0.0" in capsys.readouterr().out

    def test_constants_show(self, capsys):
        assert main(["constants", "show"]) == 0
        out = capsys.readouterr().out
        assert "zero_field_splitting" in out
        assert out.count("\n") == len(constants_lines())

    def test_usage_errors_exit_with_two(self):
        with pytest.raises(SystemExit) as exc:
            parse_arguments(["teleport"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            parse_arguments(["simulate", "--config", "c.json", "--out", "o", "--workers", "0"])
        assert exc.value.code == 2

    def test_invalid_config_writes_error(self, write_json, tmp_path):
        path = write_json({"colour": "red"})
        out = tmp_path / "out"
        with pytest.raises(SystemExit) as exc:
            main(["darkmap", "--config", str(path), "--out", str(out)])
        assert exc.value.code == 1
        error = json.loads((out / "error.json").read_text())
        assert error["error"] == "ConfigurationError"

    def test_simulate_end_to_end(self, sequence_file, tmp_path):
        out = tmp_path / "out"
        args = ["simulate", "--config", str(sequence_file), "--out", str(out), "--workers", "1"]
        assert main(args) == 0
        assert (out / "result.csv").exists()
