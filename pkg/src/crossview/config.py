"""Flat ``key=value`` configuration files mapped onto typed dataclasses."""
from __future__ import annotations

import dataclasses
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Type, TypeVar, Union, get_args, get_origin, get_type_hints

from .core import CrossViewError

T = TypeVar("T")


class ConfigError(CrossViewError):
    pass


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def parse_value(tp: Any, raw: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        options = [arg for arg in get_args(tp) if arg is not type(None)]
        if raw.strip().lower() in ("none", "null", ""):
            return None
        return parse_value(options[0], raw)
    if origin is tuple:
        args = get_args(tp)
        items = [item.strip() for item in raw.split(",") if item.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(parse_value(args[0], item) for item in items)
        if len(items) != len(args):
            raise ValueError(f"expected {len(args)} comma separated values, got {raw!r}")
        return tuple(parse_value(arg, item) for arg, item in zip(args, items))
    if isinstance(tp, type) and issubclass(tp, Enum):
        return tp(raw.strip())
    if tp is bool:
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is str:
        return raw.strip()
    raise ValueError(f"unsupported config type {tp}")


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config_file(path: Path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def config_keys(cls: Type[Any]) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def build_config(cls: Type[T], values: Mapping[str, Any], base: T | None = None) -> T:
    """Builds `cls` from raw strings (or typed values); unknown keys are rejected."""
    hints = get_type_hints(cls)
    known = config_keys(cls)
    kwargs: Dict[str, Any] = {} if base is None else dataclasses.asdict(base)  # type: ignore[call-overload]
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = parse_value(hints[key], raw) if isinstance(raw, str) else raw
        except ValueError as err:
            raise ConfigError(f"invalid value for {key!r}: {err}") from err
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {cls.__name__}: {err}") from err


def split_config(values: Mapping[str, Any], *classes: Type[Any]) -> list:
    """Routes one flat mapping to several config classes; leftovers are errors."""
    remaining = dict(values)
    parts = []
    for cls in classes:
        keys = config_keys(cls)
        parts.append({k: v for k, v in values.items() if k in keys})
        for key in keys:
            remaining.pop(key, None)
    if remaining:
        raise ConfigError(f"unknown config key {sorted(remaining)[0]!r}")
    return parts


def dump_config(config: Any) -> str:
    lines = [f"{f.name}={format_value(getattr(config, f.name))}" for f in dataclasses.fields(config)]
    return "\n".join(lines) + "\n"


def write_config(path: Path, *configs: Any) -> None:
    Path(path).write_text("".join(dump_config(c) for c in configs))
