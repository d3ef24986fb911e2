"""Shared serialization helpers: full-precision CSV and stable JSON."""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Sequence


def fmt(x) -> str:
    """Full double precision (17 significant digits), '.' decimal separator."""
    return format(float(x), ".17g")


def json_dumps(obj) -> str:
    """UTF-8 JSON with stable key ordering."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """RFC-4180-style CSV text (CRLF line endings, header row)."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else fmt(cell) for cell in row))
    return "\r\n".join(lines) + "\r\n"


def atomic_write_text(path: str, text: str) -> None:
    """Write via temp-and-rename so failures never leave partial outputs."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
