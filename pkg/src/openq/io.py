"""CSV and JSON output with '#'-prefixed metadata headers and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _format(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, complex):
        value = complex(value)
        return repr(value.real) if value.imag == 0 else repr(value)
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _format(value.item())
    return str(value)


def format_csv(columns: Sequence[str], rows: Iterable[Sequence], metadata: dict | None = None) -> str:
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {json.dumps(value, default=str)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], metadata: dict | None = None) -> Path:
    return atomic_write_text(path, format_csv(columns, rows, metadata))


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return ``(metadata, rows)``; numeric cells are converted to float."""
    metadata, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                try:
                    metadata[key.strip()] = json.loads(value)
                except json.JSONDecodeError:
                    metadata[key.strip()] = value.strip()
            else:
                body.append(line)
    rows = []
    for rec in csv.DictReader(body):
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except (TypeError, ValueError):
                out[k] = v
        rows.append(out)
    return metadata, rows


def write_json(path, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
