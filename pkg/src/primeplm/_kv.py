"""Tiny ``key = value`` file format used by structure and scenario files.

One assignment per line, ``#`` starts a comment, blank lines ignored.
Values are kept as raw strings; callers parse them.
"""

from __future__ import annotations

import os


def read_kv_file(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def split_list(value: str) -> list[str]:
    """Comma-separated list with whitespace tolerance; empty string -> []."""
    if not value.strip():
        return []
    return [item.strip() for item in value.split(",")]
