"""Flat key/value config text: `key = <json value>` per line, keys sorted.

The canonical form (sorted keys, JSON-encoded values) is what gets hashed
into run manifests and embedded in checkpoint headers, so two configs with
the same content always serialize to the same bytes.
"""

from __future__ import annotations

import json

from .errors import ConfigError


def dump_kv(values: dict) -> str:
    lines = []
    for key in sorted(values):
        lines.append(f"{key} = {json.dumps(values[key], sort_keys=True)}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def load_kv(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read())


def save_kv(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(values))
