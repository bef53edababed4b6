"""Line-oriented ``key = value`` config text.

The format is deliberately tiny: UTF-8, one assignment per line, ``#`` starts a
comment, blank lines are ignored, no sections. The same text is embedded in
weight files, so :func:`render` must be deterministic.
"""

from __future__ import annotations

from .errors import ConfigurationError, ParseError


def parse(text: str) -> dict[str, str]:
    """Parse config text into an insertion-ordered ``dict``."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = value
    return out


def render(items) -> str:
    """Render ``(key, value)`` pairs (or a dict) in the given order."""
    if isinstance(items, dict):
        items = items.items()
    lines = [f"{key} = {value}" for key, value in items]
    return "\n".join(lines) + "\n"


def read_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def get_float(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigurationError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {cfg[key]!r}") from None


def get_int(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigurationError(f"missing required key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got {cfg[key]!r}") from None


def get_range(cfg, key):
    """Parse a ``min,max`` pair."""
    parts = [p.strip() for p in cfg[key].split(",")]
    if len(parts) != 2:
        raise ConfigurationError(f"{key}: expected 'min,max', got {cfg[key]!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigurationError(f"{key}: non-numeric range {cfg[key]!r}") from None
    if lo > hi:
        raise ConfigurationError(f"{key}: min {lo} exceeds max {hi}")
    return lo, hi


def check_known(cfg, known, where):
    unknown = [k for k in cfg if k not in known]
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
