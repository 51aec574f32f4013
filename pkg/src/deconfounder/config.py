"""Flat key-value run configuration.

Grammar, one entry per line::

    # comment
    key = value        # trailing comments allowed

Keys are ``[a-z][a-z0-9_]*``; a key may appear once per file. Values are
typed by the command's key table, and keys outside that table are rejected.
Command-line flags override file values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import SpecError

_KEY = re.compile(r"^[a-z][a-z0-9_]*$")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise SpecError(f"expected a boolean, got {text!r}")


def parse_optional_float(text: str) -> Optional[float]:
    t = str(text).strip().lower()
    return None if t in ("", "none", "default") else float(t)


def parse_floats(text: str) -> tuple:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def parse_words(text: str) -> tuple:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str = ""
    multiple: bool = False
    fmt: Optional[Callable[[Any], str]] = None

    def render(self, value) -> str:
        if self.fmt is not None:
            return self.fmt(value)
        if hasattr(value, "to_text"):
            return value.to_text()
        if value is None:
            return "none"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (tuple, list)):
            return ",".join(self.render(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Raw ``key -> value string`` mapping; duplicate or malformed keys raise."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not _KEY.match(key):
            raise SpecError(f"{source}:{lineno}: expected 'key = value'")
        if key in out:
            raise SpecError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def resolve(keys, file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Typed configuration: defaults, then the file, then flag overrides."""
    table = {k.name: k for k in keys}
    unknown = sorted(set(file_values or {}) - set(table))
    if unknown:
        raise SpecError(f"unknown configuration key(s): {', '.join(unknown)}")
    cfg = {k.name: k.default for k in keys}
    for source in (file_values or {}, overrides or {}):
        for name, value in source.items():
            if name not in table:
                raise SpecError(f"unknown configuration key {name!r}")
            if value is None:
                continue
            key = table[name]
            try:
                if key.multiple:
                    items = value if isinstance(value, (list, tuple)) else \
                        [v for v in str(value).split(";") if v.strip()]
                    cfg[name] = tuple(key.parse(v) for v in items)
                else:
                    cfg[name] = key.parse(value)
            except ValueError as exc:
                raise SpecError(f"bad value for {name!r}: {exc}") from None
    return cfg


def load_config(path, keys, overrides=None) -> dict:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return resolve(keys, parse_config_text(text, str(path)), overrides)


def snapshot(keys, cfg: dict, exclude=()) -> str:
    """Config file text that reproduces ``cfg``; keys in table order."""
    lines = []
    for k in keys:
        if k.name in exclude:
            continue
        value = cfg[k.name]
        if k.multiple:
            value = "; ".join(k.render(v) for v in value)
        else:
            value = k.render(value)
        lines.append(f"{k.name} = {value}")
    return "\n".join(lines) + "\n"
