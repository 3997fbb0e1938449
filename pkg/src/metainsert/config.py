"""Flat key-value text config files.

Format: one ``key = value`` pair per line, ``#`` comments, blank lines
ignored. Values are kept as strings; callers coerce.
"""
from __future__ import annotations

from pathlib import Path


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def write_kv(path, pairs: dict[str, str | float | int]) -> None:
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def get_float(kv: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in kv:
        if default is None:
            raise ValueError(f"missing config key {key!r}")
        return default
    try:
        return float(kv[key])
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: bad float {kv[key]!r}") from exc


def get_int(kv: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in kv:
        if default is None:
            raise ValueError(f"missing config key {key!r}")
        return default
    try:
        return int(kv[key])
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: bad int {kv[key]!r}") from exc
