"""Canonical report serialization.

JSON output is byte-deterministic: keys sorted, floats rendered with
%.12g, LF newlines, UTF-8, atomic replace on write. Identical runs must
produce identical bytes, so nothing here may depend on dict insertion
order or platform float repr.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Any, Iterable

from .errors import DegenerateInput, IoError

FORMATS = ("json", "csv")


def _fmt_number(value: float) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise DegenerateInput(f"cannot serialize non-finite number {value}")
    return format(value, ".12g")


def canonical_json(obj: Any) -> str:
    """Render to canonical JSON text (no trailing newline)."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, int, float)):
        return _fmt_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not all(isinstance(k, str) for k in obj):
            raise DegenerateInput("report keys must be strings")
        parts = [f"{json.dumps(k, ensure_ascii=False)}: {canonical_json(obj[k])}"
                 for k in sorted(obj)]
        return "{" + ", ".join(parts) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(canonical_json(v) for v in obj) + "]"
    if hasattr(obj, "to_dict"):
        return canonical_json(obj.to_dict())
    raise DegenerateInput(f"cannot serialize {type(obj).__name__} to a report")


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, int, float)):
        return _fmt_number(value)
    text = str(value)
    if any(ch in text for ch in ",\"\n"):
        text = '"' + text.replace('"', '""') + '"'
    return text


def csv_text(rows: Iterable[dict]) -> str:
    """Flat rows to CSV; columns in first-seen key order."""
    rows = [dict(r) for r in rows]
    if not rows:
        raise DegenerateInput("no rows to write")
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = [",".join(_csv_cell(c) for c in columns)]
    for row in rows:
        lines.append(",".join(_csv_cell(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _flatten_row(row: dict) -> dict:
    flat: dict[str, Any] = {}
    for key, value in row.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                clash = sub in row or sub in flat
                flat[f"{key}.{sub}" if clash else sub] = v
        else:
            flat[key] = value
    return flat


def csv_rows(report: Any) -> list[dict]:
    """Extract the natural flat-table view of a report."""
    if hasattr(report, "to_dict"):
        report = report.to_dict()
    if isinstance(report, list):
        return [_flatten_row(r if isinstance(r, dict) else r.to_dict())
                for r in report]
    if not isinstance(report, dict):
        raise DegenerateInput(f"cannot tabulate {type(report).__name__}")
    for key in ("per_prompt", "rows", "per_alpha"):
        if key in report:
            return [_flatten_row(r) for r in report[key]]
    if "history" in report:
        rows = []
        for entry in report["history"]:
            row = {"epoch": entry[0], "loss": entry[1]}
            if len(entry) > 2:
                row["grad_norm"] = entry[2]
            rows.append(row)
        return rows
    return [_flatten_row(report)]


def write_text_atomic(path: str, text: str) -> None:
    """UTF-8, LF newlines, atomic replace; no partial files on error."""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise IoError(f"parent directory does not exist: {directory}")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(text.encode("utf-8"))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_report(report: Any, path: str, format: str = "json") -> None:
    if format not in FORMATS:
        raise DegenerateInput(f"unknown format {format!r}, expected {FORMATS}")
    if format == "json":
        write_text_atomic(path, canonical_json(report) + "\n")
    else:
        write_text_atomic(path, csv_text(csv_rows(report)))
