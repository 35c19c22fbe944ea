"""Structured run reports and their flat tabular exports.

A report is a JSON document with sorted keys.  Non-finite floats are
written as the strings ``"inf"``, ``"-inf"`` and ``"nan"`` so the document
stays strict JSON.  Node fields are written level by level: every process
block lists ``{"k": time, "level": tree level, "nodes": [[...], ...]}``
entries, and the position inside ``nodes`` is the node index on that level.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .tree import AdaptedProcess

__all__ = ["SCHEMA_ID", "jsonable", "process_block", "write_report", "write_rows",
           "trajectory_rows", "diagnostic_rows"]

SCHEMA_ID = "fbsde-tree-report/1"


def jsonable(value):
    """Convert numpy containers and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def process_block(process, level_shift=0):
    """Level-by-level listing of an adapted process.

    ``level_shift`` is added to the time index to get the storage level; it
    is 1 for quantities measurable one step later than the convention.
    """
    if isinstance(process, AdaptedProcess):
        items = [(k, process[k]) for k in process.times]
    else:
        items = list(process)
    return [{"k": int(k), "level": int(k) + level_shift, "nodes": np.asarray(f).tolist()}
            for k, f in items]


def write_report(path, report):
    text = json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(value):
    value = jsonable(value)
    return repr(value) if isinstance(value, float) else value


TRAJECTORY_HEADER = ("process", "k", "level", "node", "component", "value")
DIAGNOSTIC_HEADER = ("ladder_level", "alpha", "picard_iterations", "calls", "contraction")


def trajectory_rows(blocks):
    """Rows of ``TRAJECTORY_HEADER`` from ``{name: process_block(...)}``."""
    for name in sorted(blocks):
        for entry in blocks[name]:
            for node, vec in enumerate(entry["nodes"]):
                for comp, val in enumerate(np.atleast_1d(vec)):
                    yield name, entry["k"], entry["level"], node, comp, float(val)


def diagnostic_rows(diag):
    """Rows of ``DIAGNOSTIC_HEADER`` from a diagnostics dictionary."""
    for j, alpha in enumerate(diag.get("alpha_grid", [])):
        yield (j, alpha, diag["picard_iterations"][j], diag["calls"][j],
               diag["contraction"][j])
