"""CSV and JSON artifacts with round-trip exact (17 significant digit) numbers."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: keys keep insertion order, floats use ``%.17g``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_, int, np.integer, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _ensure_dir(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path.parent}: {exc}") from exc


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    _ensure_dir(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
                w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def write_summary(path, kind: str, config: dict, payload: dict) -> Path:
    """Summary document. Wall time is deliberately absent (see ``write_timing``)."""
    doc = {"schema_version": SCHEMA_VERSION, "tool": "hypoflow", "tool_version": __version__,
           "experiment": kind, "config": config}
    doc.update(payload)
    path = Path(path)
    _ensure_dir(path)
    try:
        path.write_text(to_json(doc) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def write_timing(path, wall_seconds: float) -> Path:
    path = Path(path)
    _ensure_dir(path)
    path.write_text(to_json({"schema_version": SCHEMA_VERSION, "wall_time_s": wall_seconds}) + "\n")
    return path


def read_csv(path):
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows).reshape(-1, len(header))
