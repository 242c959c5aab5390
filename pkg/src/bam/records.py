"""CSV records and quantile summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def write_csv(rows, columns, path) -> Path:
    """One row per record with a fixed header; floats use repr so they round-trip."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])
    return path


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer, np.bool_)):
        return int(value)
    return value


def read_csv(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def quantile_summary(values) -> dict:
    """Median and the 10% / 90% quantiles (linear interpolation)."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return {"n": 0, "median": None, "q10": None, "q90": None}
    q10, med, q90 = np.quantile(v, [0.1, 0.5, 0.9])
    return {"n": int(v.size), "median": float(med), "q10": float(q10), "q90": float(q90)}


def grouped_summary(rows, keys, value) -> list:
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return [{**dict(zip(keys, k)), **quantile_summary(v)} for k, v in sorted(groups.items())]


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
