"""CSV and JSON writers with a leading metadata record.

CSV files start with ``# meta <json>`` (and optionally ``# summary <json>``)
comment lines followed by a header row. Floats are written with 17
significant digits so files round-trip exactly and are byte-stable.
"""

from __future__ import annotations

import io
import json
from typing import Optional, Sequence

import numpy as np

from .hamflow import Trajectory, hamiltonian_along
from .model import ChartModel


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def table_csv(header: Sequence[str], rows, meta: dict, summary: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write("# meta " + json.dumps(_clean(meta), sort_keys=True) + "\n")
    if summary is not None:
        buf.write("# summary " + json.dumps(_clean(summary), sort_keys=True) + "\n")
    buf.write(",".join(header) + "\n")
    for row in np.atleast_2d(np.asarray(rows, float)):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def trajectory_columns(n: int) -> list:
    return ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["H"]


def trajectory_table(model: ChartModel, traj: Trajectory) -> np.ndarray:
    H = hamiltonian_along(model, traj.q, traj.p)
    return np.column_stack([traj.t, traj.q, traj.p, H])


def trajectory_csv(model: ChartModel, traj: Trajectory, meta: dict,
                   summary: Optional[dict] = None) -> str:
    return table_csv(trajectory_columns(model.n), trajectory_table(model, traj), meta, summary)


def trajectory_json(model: ChartModel, traj: Trajectory, meta: dict,
                    summary: Optional[dict] = None) -> str:
    cols = trajectory_columns(model.n)
    table = trajectory_table(model, traj)
    return dumps_json({"meta": meta, "summary": summary or {}, "columns": cols,
                       "rows": table.tolist()})


def read_csv(path_or_text: str):
    """Parse a file written by :func:`table_csv`; returns ``(meta, summary, header, data)``."""
    text = path_or_text
    if "\n" not in path_or_text:
        with open(path_or_text) as fh:
            text = fh.read()
    meta, summary, lines = {}, None, text.splitlines()
    while lines and lines[0].startswith("#"):
        line = lines.pop(0)
        if line.startswith("# meta "):
            meta = json.loads(line[len("# meta "):])
        elif line.startswith("# summary "):
            summary = json.loads(line[len("# summary "):])
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], float)
    return meta, summary, header, data.reshape(-1, len(header))
