"""Shared fixtures: level models and a small pulse-sequence file."""

import json
from pathlib import Path

import pytest

from nvoc.levels import DecayParams, LevelModel, nv_level_model
from nvoc.schemas import ModelConfig


@pytest.fixture(scope="session")
def model_config() -> ModelConfig:
    return ModelConfig()


@pytest.fixture(scope="session")
def nv_model(model_config: ModelConfig) -> LevelModel:
    """Nine-level model at the calibrated strain."""
    return model_config.level_model()


@pytest.fixture(scope="session")
def ideal_model(model_config: ModelConfig) -> LevelModel:
    """Ideal selection rules and no spontaneous emission."""
    return nv_level_model(
        model_config.ground_params(),
        model_config.excited_params(),
        DecayParams(rate=0.0),
        pure_selection=True,
    )


@pytest.fixture
def sequence_data() -> dict:
    return {
        "schema_version": 1,
        "initial": {"0": 1.0},
        "segments": [
            {
                "label": "excite",
                "duration_s": 50e-9,
                "drives": [
                    {"transition": ["0", "Ex"], "rabi_hz": 20e6, "polarization": "x"}
                ],
            },
            {"label": "wait", "duration_s": {"value": 20, "unit": "ns"}},
        ],
        "samples_per_segment": 11,
    }


@pytest.fixture
def sequence_file(tmp_path: Path, sequence_data: dict) -> Path:
    path = tmp_path / "sequence.json"
    path.write_text(json.dumps(sequence_data), encoding="utf-8")
    return path


@pytest.fixture
def write_json(tmp_path: Path):
    def write(data: object, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write
