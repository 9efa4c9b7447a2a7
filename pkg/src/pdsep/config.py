"""Plain ``key=value`` run configuration.

Each command declares its options once; values are resolved as
option default < config file < command-line flag, and the resolved set is
written back as a config file that replays the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    """Malformed config text or a value that does not fit its option."""


@dataclass(frozen=True)
class Option:
    key: str
    type: Callable[[str], Any]
    default: Any
    help: str = ""
    choices: tuple | None = None
    flag: bool = False

    @property
    def cli(self) -> str:
        return "--" + self.key.replace("_", "-")


def parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_text(text: str) -> dict[str, str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"line {number}: expected key=value, got {line!r}")
        if key in values:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        values[key] = raw.strip()
    return values


def load_file(path) -> dict[str, str]:
    try:
        return parse_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _cast(option: Option, raw) -> Any:
    if raw is None:
        return None
    if isinstance(raw, str):
        if raw == "" and option.default is None:
            return None
        try:
            value = parse_bool(raw) if option.flag else option.type(raw)
        except ValueError as exc:
            raise ConfigError(f"{option.key}: {exc}") from None
    else:
        value = raw
    if option.choices and value not in option.choices:
        raise ConfigError(f"{option.key} must be one of {', '.join(map(str, option.choices))}, got {value!r}")
    return value


def resolve(options: list[Option], file_values: dict[str, str], cli_values: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults, config-file strings and explicit flags (None = not given)."""
    known = {o.key for o in options}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    resolved = {}
    for option in options:
        value = cli_values.get(option.key)
        if value is None:
            value = _cast(option, file_values.get(option.key))
        else:
            value = _cast(option, value)
        resolved[option.key] = option.default if value is None else value
    return resolved


def render(resolved: dict[str, Any]) -> str:
    lines = []
    for key, value in resolved.items():
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_resolved(path, resolved: dict[str, Any]) -> None:
    Path(path).write_text(render(resolved))
