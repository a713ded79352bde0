"""Configuration loading, recipe dispatch and result writing for the `nvoc` command."""

# %% [markdown]
# ## Imports

# %%
import json
from collections.abc import Callable
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from nvoc.config import TOOL_VERSION, load_constants, settings
from nvoc.dynamics import DensityMatrix
from nvoc.errors import ConfigurationError, NVOCError
from nvoc.experiments import (
    ScanResult,
    pump_segments,
    run_dark_resonance_map,
    run_microwave_rabi,
    run_optical_pumping,
    run_ple_scan,
    run_sequence,
    run_two_photon_rabi,
)
from nvoc.fields import compile_sequence
from nvoc.logger import setup_logging
from nvoc.schemas import RECIPES, SequenceFile, load_model_file
from nvoc.utils import atomic_write_text, config_hash, jsonable

# %%
logger = setup_logging(__name__, settings.log_level)

RESULT_FILES = ("result.csv", "fits.json", "config.json", "meta.json")


# %% [markdown]
# ## Manifest


# %%
class RunManifest(BaseModel):
    """Provenance written as `meta.json` next to every result."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    recipe: str
    config_hash: str = Field(description="SHA-256 of the normalized config and constants version.")
    constants_version: str
    seed: int = 0
    timestamp: str = Field(default_factory=lambda: datetime.now(UTC).isoformat())
    tool_version: str = TOOL_VERSION
    workers: int = 1


def normalized_config(config: BaseModel) -> dict[str, Any]:
    return config.model_dump(mode="json")


def manifest_for(subcommand: str, config: BaseModel, workers: int) -> RunManifest:
    version = load_constants().version
    digest = config_hash({"config": normalized_config(config), "constants_version": version})
    return RunManifest(
        recipe=subcommand,
        config_hash=digest,
        constants_version=version,
        seed=int(getattr(config, "seed", 0)),
        workers=workers,
    )


# %% [markdown]
# ## Loading


# %%
def load_config(path: str | Path, subcommand: str) -> BaseModel:
    """Read and validate the config file of `subcommand`.

    Raises:
        ConfigurationError: unknown subcommand, unreadable file, or a validation problem
            (one path-annotated line per problem).
    """
    if subcommand not in RECIPES:
        raise ConfigurationError(
            f"unknown subcommand '{subcommand}' (expected one of {', '.join(RECIPES)})"
        )
    return load_model_file(RECIPES[subcommand], Path(path))


# %% [markdown]
# ## Dry runs


# %%
def describe(subcommand: str, config: BaseModel) -> list[str]:
    """Human-readable plan of a run: compiled segments or scan dimensions."""
    lines = [f"{subcommand}: configuration valid"]
    if isinstance(config, SequenceFile):
        model = config.model.level_model()
        compiled = compile_sequence(config.segments_for(model), model)
        lines += [segment.summary() for segment in compiled]
    elif subcommand == "pump":
        model = config.model.level_model()  # type: ignore[attr-defined]
        segments = pump_segments(config.target_vector(), config.steps)  # type: ignore[attr-defined]
        lines += [segment.summary() for segment in compile_sequence(segments, model)]
    elif subcommand == "rabi-2photon":
        lines.append(
            f"{len(config.powers_w)} powers x {config.times.points} times x "  # type: ignore[attr-defined]
            f"{config.jitter_samples} jitter samples"  # type: ignore[attr-defined]
        )
    elif subcommand == "darkmap":
        lines.append(
            f"{config.detuning.points} detunings x "  # type: ignore[attr-defined]
            f"{config.modulation_offset.points} modulation frequencies"  # type: ignore[attr-defined]
        )
    elif subcommand == "ple":
        laser = config.laser  # type: ignore[attr-defined]
        lines.append(
            "laser axis: automatic" if laser is None else f"laser axis: {laser.points} points"
        )
    elif subcommand == "rabi-mw":
        lines.append(f"{config.durations.points} microwave durations")  # type: ignore[attr-defined]
    return lines


# %% [markdown]
# ## Running


# %%
def _simulate(config: SequenceFile, out: Path) -> dict[str, Any]:
    model = config.model.level_model()
    compiled = compile_sequence(config.segments_for(model), model)
    rho0 = DensityMatrix.from_populations(config.initial_populations(model))
    trajectory = run_sequence(rho0, compiled, config.samples_per_segment)
    trajectory.to_csv(out / "result.csv", coherences=config.coherences)
    return {
        "final_populations": dict(zip(trajectory.labels or (), trajectory.final.populations)),
        "duration_s": float(trajectory.times[-1]),
        "segments": [segment.label for segment in compiled],
    }


def _recipe(subcommand: str) -> Callable[..., Any]:
    return {
        "ple": run_ple_scan,
        "pump": run_optical_pumping,
        "rabi-2photon": run_two_photon_rabi,
        "darkmap": run_dark_resonance_map,
    }[subcommand]


def execute(subcommand: str, config: BaseModel, workers: int) -> ScanResult:
    if subcommand == "rabi-mw":
        return run_microwave_rabi(config)  # type: ignore[arg-type]
    result = _recipe(subcommand)(config, workers)
    return result if isinstance(result, ScanResult) else result.to_scan_result()


def _cleanup(out: Path) -> None:
    for name in RESULT_FILES:
        (out / name).unlink(missing_ok=True)


def write_error(out: Path, error: Exception) -> Path:
    if isinstance(error, NVOCError):
        payload = error.to_dict()
    else:
        payload = {"error": type(error).__name__, "message": str(error), "details": {}}
    return atomic_write_text(out / "error.json", json.dumps(payload, indent=2) + "\n")


def run(
    subcommand: str,
    config: BaseModel,
    out: str | Path,
    workers: int | None = None,
    dry_run: bool = False,
) -> int:
    """Run one recipe and write its result directory.

    Writes `result.csv`, `fits.json`, `config.json` and `meta.json` atomically. On
    failure those files are removed, `error.json` describes the error and the status
    is 1.

    Returns:
        int: Exit status (0 for success).
    """
    out = Path(out)
    workers = settings.workers if workers is None else workers
    if dry_run:
        for line in describe(subcommand, config):
            print(line)
        return 0

    logger.info(f"Running {subcommand} with {workers} worker(s) into {out}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    try:
        manifest = manifest_for(subcommand, config, workers)
        if isinstance(config, SequenceFile):
            fits = _simulate(config, out)
        else:
            result = execute(subcommand, config, workers)
            atomic_write_text(out / "result.csv", result.to_csv())
            fits = result.fits
        atomic_write_text(
            out / "fits.json", json.dumps(jsonable(fits), indent=2, sort_keys=True) + "\n"
        )
        atomic_write_text(
            out / "config.json",
            json.dumps(normalized_config(config), indent=2, sort_keys=True) + "\n",
        )
        atomic_write_text(out / "meta.json", manifest.model_dump_json(indent=2) + "\n")
    except Exception as e:
        logger.error(f"{subcommand} failed: {e}")
        _cleanup(out)
        write_error(out, e)
        return 1
    logger.info(f"Wrote {', '.join(RESULT_FILES)} to {out}")
    return 0


# %%
def constants_lines(path: str | Path | None = None) -> list[str]:
    constants = load_constants(path)
    lines = [f"constants version {constants.version}"]
    for name, value, unit, note in constants.table():
        lines.append(f"{name:32s} {value:>16.9g} {unit:14s} {note}".rstrip())
    lines.append("branching (0, +1, -1):")
    for label, probabilities in constants.branching.items():
        lines.append(f"  {label:4s} {np.round(probabilities, 6).tolist()}")
    return lines
