"""Flat ``key = value`` text files.

Used for sweep configuration files and for DgpParams. The syntax is the
dotenv one read by python-dotenv (``#`` comments, blank lines, optional
quotes); lists are comma separated and matrix rows are separated by ``;``.
Later assignments of a key win.
"""

import io
from pathlib import Path
from typing import Any, Optional

from dotenv import dotenv_values

from app.errors import ConfigError


def _checked(values: dict[str, Optional[str]]) -> dict[str, str]:
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ConfigError(f"keys without a value: {', '.join(missing)}")
    return {key: value.strip() for key, value in values.items() if value is not None}


def parse_kv(text: str) -> dict[str, str]:
    """Parse key-value text into raw string values."""
    return _checked(dotenv_values(stream=io.StringIO(text), interpolate=False))


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"cannot read {path}: no such file")
    return _checked(dotenv_values(path, interpolate=False))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ";".join(format_value(row) for row in value)
        return ",".join(format_value(item) for item in value)
    return str(value)


def format_kv(values: dict[str, Any], header: str | None = None) -> str:
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    lines += [f"{key} = {format_value(value)}" for key, value in values.items() if value is not None]
    return "\n".join(lines) + "\n"


def to_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def to_floats(value: str) -> list[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"not a number list: {value!r}") from e


def to_ints(value: str) -> list[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"not an integer list: {value!r}") from e


def to_matrix(value: str) -> list[list[float]]:
    return [to_floats(row) for row in value.split(";") if row.strip()]
