"""CSV helpers shared by every module that owns a wire format."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputOutputError, MissingColumn


def format_float(value: float) -> str:
    return format(float(value), ".9g")


def read_rows(path, required: Sequence[str]) -> tuple[list[str], list[dict[str, str]]]:
    """Read a headed CSV file and check that ``required`` columns exist."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if header is None:
                raise MissingColumn(f"{path}: no header row")
            header = [h.strip() for h in header]
            reader.fieldnames = header
            rows = list(reader)
    except FileNotFoundError as exc:
        raise InputOutputError(f"{path}: no such file") from exc
    except UnicodeDecodeError as exc:
        raise InputOutputError(f"{path}: not a text file") from exc
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    return header, rows


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise InputOutputError(f"{path}: {exc}") from exc


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    write_atomic(path, render_csv(header, rows))
