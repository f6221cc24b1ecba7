"""Flat key/value config files with dotted section names.

Format: one `key = value` pair per line, `#` starts a comment, blank lines
are ignored. Later duplicates win. Keys use dotted sections, for example::

    task.id = reach
    observation.mode = est_pose
    train.epochs = 60
    tracker.sigma_pos = 0.0006
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping


def loads_config(text: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        mapping[key] = value
    return mapping


def load_config_file(path) -> dict[str, str]:
    return loads_config(Path(path).read_text(encoding="utf-8"))


def dumps_config(mapping: Mapping[str, object]) -> str:
    lines = [f"{key} = {mapping[key]}" for key in mapping]
    return "\n".join(lines) + "\n"


def write_config_file(mapping: Mapping[str, object], path) -> Path:
    path = Path(path)
    path.write_text(dumps_config(mapping), encoding="utf-8")
    return path
