"""Set up loggers with configurable levels and console output."""

# %%
import logging
from typing import Literal

# %% [markdown]
# ## Logging
# Levels follow the standard library:
# | Level | Value | Used for |
# |---------|--------|-------------|
# | `logging.DEBUG` | 10 | per-point scan progress, compiled couplings |
# | `logging.INFO` | 20 | calibrations, run start/finish, written files |
# | `logging.WARNING` | 30 | degenerate steady states, flagged fits, dropped tones |
# | `logging.ERROR` | 40 | failed runs (also serialized to `error.json`) |

DEFAULT_FORMAT = "%(asctime)s - %(module)s - %(levelname)s - %(message)s"


# %%
def setup_logging(
    name: str | None = None,
    level: str | Literal[0, 10, 20, 30, 40, 50] = "INFO",
    format_string: str | None = None,
) -> logging.Logger:
    """Set up a logger with specified level and console output.

    An already configured logger is returned without adding another handler, so every
    module can call this at import time.

    Args:
        name: The name of the logger. If None, uses this module's name.
        level: The logging level as a string or integer value. Default is 'INFO'.
        format_string: Custom format string for log messages. If None, uses
            `DEFAULT_FORMAT`.

    Returns:
        logging.Logger: A configured logger with a single console handler.

    Examples:
        >>> setup_logging("nvoc.levels", level="DEBUG").debug("labels tracked")
    """
    if name is None:
        name = __name__

    logger = logging.getLogger(name)

    if not logger.handlers:
        if isinstance(level, str):
            level = getattr(logging, level.upper())
        logger.setLevel(level)

        ch = logging.StreamHandler()
        ch.setLevel(level)
        ch.setFormatter(logging.Formatter(format_string or DEFAULT_FORMAT))
        logger.addHandler(ch)

    return logger


# %%
def set_level(level: str | int) -> None:
    """Change the level of every `nvoc` logger and its handlers (used by `--log-level`)."""
    if isinstance(level, str):
        level = getattr(logging, level.upper())
    for name, candidate in logging.Logger.manager.loggerDict.items():
        if not name.startswith("nvoc") or not isinstance(candidate, logging.Logger):
            continue
        candidate.setLevel(level)
        for handler in candidate.handlers:
            handler.setLevel(level)


if __name__ == "__main__":
    logger = setup_logging(level=logging.INFO)
    logger.debug("This is a debug message.")
    logger.info("This is an info message.")

    same_logger = setup_logging(name=__name__, level=logging.DEBUG)
    print(f"Number of handlers: {len(same_logger.handlers)}")  # Should be 1
