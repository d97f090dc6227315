"""Flat ``key=value`` text files, one setting per line, ``#`` starts a comment."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, os.PathLike]


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: PathLike) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_kv(text, str(path))


def coerce(value: str, kind: Any, key: str) -> Any:
    """Convert a config string to ``kind`` (int, float, str, bool or tuple of float)."""
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "floats":
            return tuple(float(v) for v in value.split(",") if v.strip())
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {getattr(kind, '__name__', kind)}") from None


def dataclass_from_kv(cls, values: dict[str, str], **extra):
    """Build ``cls`` from string values, converting by the field's default type."""
    kwargs = dict(extra)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        default = fields[key].default
        kind = "floats" if isinstance(default, tuple) else type(default)
        kwargs[key] = coerce(raw, kind, key)
    return cls(**kwargs)


def format_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ",".join(f"{v:g}" for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
