"""CSV files written by the command line runner.

``telemetry.csv`` has exactly the columns in :data:`TELEMETRY_COLUMNS`;
quantities needed for offline verification that do not belong there
(``J(u_k)``, dual pinning, inner tolerance) go to ``diagnostics.csv`` keyed by
``k``.  Floats are written with ``repr`` so a file read back reproduces the
in-memory values bitwise.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import IterationRecord

TELEMETRY_COLUMNS = ("k", "objective", "residual", "active_size", "insertion_value", "wall_ms")
DIAGNOSTIC_COLUMNS = ("k", "exact_objective", "pinning", "subproblem_tol")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _num(s):
    if s == "":
        return None
    return float(s)


def write_telemetry(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in TELEMETRY_COLUMNS])


def write_diagnostics(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in DIAGNOSTIC_COLUMNS])


def read_records(telemetry_path, diagnostics_path=None) -> list:
    """Rebuild :class:`IterationRecord` objects from the CSV pair."""
    with open(telemetry_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != TELEMETRY_COLUMNS:
        raise ValueError(f"{telemetry_path}: unexpected columns {tuple(rows[0].keys())}")
    extra = {}
    if diagnostics_path is not None and Path(diagnostics_path).exists():
        with open(diagnostics_path, newline="") as fh:
            for d in csv.DictReader(fh):
                extra[int(d["k"])] = d
    out = []
    for row in rows:
        k = int(row["k"])
        d = extra.get(k, {})
        nan = float("nan")
        out.append(IterationRecord(
            k=k,
            objective=float(row["objective"]),
            residual=_num(row["residual"]),
            active_size=int(row["active_size"]),
            insertion_value=float(row["insertion_value"]),
            wall_ms=float(row["wall_ms"]),
            exact_objective=_num(d.get("exact_objective", "")) if d else nan,
            pinning=_num(d.get("pinning", "")) if d else nan,
            subproblem_tol=_num(d.get("subproblem_tol", "")) if d else nan,
        ))
    return out


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_rows(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def finite_or_none(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
