"""Flat ``key = value`` configuration files.

Keys carry a section prefix (``model.``, ``loss.``, ``train.``,
``augmentation.``, ``split.``, ``synth.``). Lines starting with ``#`` are
comments. Precedence when resolving: command-line flag > file > default.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    return entries


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def write_config(path, entries: Mapping[str, Any]) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in sorted(entries.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _coerce(text: str, hint, name: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        return _coerce(text, args[0], name)
    if origin is tuple:
        inner = typing.get_args(hint)[0] if typing.get_args(hint) else str
        return tuple(_coerce(p.strip(), inner, name) for p in text.split(",") if p.strip())
    if hint is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {hint.__name__}") from None
    return text


def build(cls, entries: Mapping[str, str], prefix: str, base=None):
    """Instantiate dataclass ``cls`` from prefixed string entries."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for key, text in entries.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        kw[name] = _coerce(text, hints[name], key)
    try:
        if base is not None:
            return dataclasses.replace(base, **kw)
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix} configuration: {exc}") from None


def flatten(prefix: str, obj) -> dict[str, Any]:
    return {f"{prefix}.{f.name}": getattr(obj, f.name) for f in dataclasses.fields(obj)}


def check_known(entries: Mapping[str, str], prefixes) -> None:
    for key in entries:
        if key.split(".", 1)[0] not in prefixes:
            raise ConfigError(f"unknown config key {key!r}")
