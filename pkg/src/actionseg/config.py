"""Flat key-value config files with dotted sections, plus CLI-style overrides."""

from __future__ import annotations

from pathlib import Path


def read_keyvalue_file(path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped."""
    kv: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    return kv


def write_keyvalue_file(path, kv: dict) -> None:
    """Write keys in sorted order so the output is canonical and diff-able."""
    lines = [f"{k} = {kv[k]}" for k in sorted(kv)]
    Path(path).write_text("\n".join(lines) + "\n")


def apply_overrides(kv: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(kv)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
