"""Line-based ``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str, source: str = "config") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("", "none"):
            return None
        return _convert(value, args[0], key)
    try:
        if tp is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {getattr(tp, '__name__', tp)}") from None


def field_aliases(cls) -> dict[str, str]:
    """File key -> dataclass field name; a field may declare ``metadata={'key': ...}``."""
    return {f.metadata.get("key", f.name): f.name for f in dataclasses.fields(cls)}


def build(cls, values: dict[str, str], source: str = "config"):
    """Instantiate dataclass ``cls`` from string values; unknown keys are an error."""
    aliases = field_aliases(cls)
    hints = typing.get_type_hints(cls)
    unknown = sorted(set(values) - set(aliases))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(aliases))}")
    kwargs = {aliases[k]: _convert(v, hints[aliases[k]], k) for k, v in values.items()}
    return cls(**kwargs)


def load(cls, path, **overrides):
    """Read ``path`` into ``cls``; non-None ``overrides`` (by field name) win."""
    path = Path(path)
    values = parse_kv(path.read_text(encoding="utf-8"), str(path))
    obj = build(cls, values, str(path))
    return replace(obj, **overrides)


def replace(obj, **overrides):
    changes = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(obj, **changes) if changes else obj


def dump(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        lines.append(f"{f.metadata.get('key', f.name)} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
