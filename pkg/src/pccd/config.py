"""Config files: JSON objects or ``key = value`` lines (``#`` comments allowed)."""

from __future__ import annotations

import json
import types
import typing
from dataclasses import fields
from pathlib import Path


def _coerce(value, tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    if tp is float:
        return float(value)
    return value


def parse_config_text(text):
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(cls, path=None, **overrides):
    """Instantiate dataclass ``cls`` from a config file plus keyword overrides."""
    raw = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    values = {k: _coerce(v, known[k]) for k, v in raw.items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)
