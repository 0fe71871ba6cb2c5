"""Readers and writers for the line-delimited record files the CLI
emits (metrics logs, sweep tables)."""

from __future__ import annotations

import json


def write_records(records, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_records(path: str) -> list[dict]:
    """Parse a line-delimited record file; every line must be a JSON
    object."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object per line")
            out.append(rec)
    return out
