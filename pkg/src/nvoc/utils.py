"""Utility functions"""

# %% [markdown]
# ## Imports

# %%
import hashlib
import json
import math
import os
import tempfile
from collections.abc import Callable
from enum import Enum
from functools import wraps
from pathlib import Path
from typing import Any, ParamSpec, TypeVar

import numpy as np

# %% [markdown]
# ## P = ParamSpec("P"), R = TypeVar("R")
# `format_docstring` keeps the decorated function's full signature (P) and return type (R)
# so that pyright still checks calls through the wrapper.

# %%
P = ParamSpec("P")
R = TypeVar("R")

TWO_PI = 2.0 * math.pi


# %%
def format_docstring(**kwargs: object) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """Format function's docstring with provided variables."""

    def decorator(func: Callable[P, R]) -> Callable[P, R]:
        if func.__doc__:
            func.__doc__ = func.__doc__.format(**kwargs)

        @wraps(func)
        def wrapper(*args: P.args, **kw: P.kwargs) -> R:
            return func(*args, **kw)

        return wrapper

    return decorator


# %% [markdown]
# ## Units
# Files hold plain Hz; everything inside the package is angular frequency (rad/s).


# %%
def to_angular(hz: float) -> float:
    return TWO_PI * hz


def to_hz(angular: float) -> float:
    return angular / TWO_PI


# %% [markdown]
# ## Reproducibility


# %%
def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace so equal objects hash equally."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def jsonable(value: Any) -> Any:
    """Plain JSON types from numpy scalars and arrays, complex numbers and enums."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return jsonable(value.item())
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Enum):
        return value.value
    return value


def point_rng(seed: int, *index: int) -> np.random.Generator:
    """Generator for one scan point, independent of execution order and worker count."""
    return np.random.default_rng(np.random.SeedSequence([seed, *index]))


# %%
def atomic_write_text(path: Path, text: str) -> Path:
    """Write `text` to `path` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path
