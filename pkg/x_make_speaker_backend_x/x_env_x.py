"""Environment overrides for back-end defaults."""

from __future__ import annotations

import os

THREADS_ENV = "X_SPEAKER_BACKEND_THREADS"
LOG_LEVEL_ENV = "X_SPEAKER_BACKEND_LOG_LEVEL"


def get_env_str(name: str, *, default: str | None = None) -> str | None:
    """Return the trimmed value of an environment variable."""

    value = os.environ.get(name)
    if value is None:
        return default
    stripped = value.strip()
    return stripped or default


def get_env_int(name: str, *, default: int, minimum: int | None = None) -> int:
    """Parse an integer environment variable, falling back on bad input."""

    raw = get_env_str(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    if minimum is not None and value < minimum:
        return default
    return value


def default_workers() -> int:
    return get_env_int(THREADS_ENV, default=1, minimum=1)


def default_log_level() -> str:
    return get_env_str(LOG_LEVEL_ENV, default="INFO") or "INFO"


__all__ = [
    "LOG_LEVEL_ENV",
    "THREADS_ENV",
    "default_log_level",
    "default_workers",
    "get_env_int",
    "get_env_str",
]
