"""Field snapshots and result files.

A snapshot is one line of JSON (the header) followed by the partial sums
``X_1 .. X_N`` as little-endian float64 in row-major order. Result tables are
written with ``repr`` floats so a rerun with the same seed is byte-identical.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .field_sampler import FieldStack, GridSpec
from .kernels import SimulationParams

SNAPSHOT_FORMAT = "liouville-field/1"


def save_field(stack: FieldStack, path) -> None:
    p = stack.params
    header = {
        "format": SNAPSHOT_FORMAT,
        "grid": stack.grid.to_dict(),
        "schedule": [p.c(n) for n in range(1, p.truncation + 1)],
        "mass": p.mass,
        "gamma": p.gamma,
        "seed": stack.seed,
        "replica": stack.replica,
        "levels": list(stack.levels),
        "dtype": "<f8",
        "order": "C",
        "shape": [len(stack.levels), stack.grid.resolution, stack.grid.resolution],
    }
    data = np.ascontiguousarray(stack.partial_sums, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes(order="C"))


def load_field(path) -> FieldStack:
    with open(path, "rb") as fh:
        head = fh.readline()
        try:
            h = json.loads(head)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not a field snapshot") from exc
        if h.get("format") != SNAPSHOT_FORMAT:
            raise ParameterError(f"{path}: unknown snapshot format {h.get('format')!r}")
        raw = fh.read()
    shape = tuple(h["shape"])
    sums = np.frombuffer(raw, dtype="<f8")
    if sums.size != math.prod(shape):
        raise ParameterError(f"{path}: expected {math.prod(shape)} values, found {sums.size}")
    sums = sums.reshape(shape).astype(float)
    g = h["grid"]
    grid = GridSpec(g["extent"], g["resolution"], g["periodic"], tuple(g["origin"]))
    sched = tuple(h["schedule"])
    params = SimulationParams(h.get("gamma", 0.0), h["mass"], len(sched), sched)
    levels = tuple(h["levels"])
    layers = None
    if levels == tuple(range(1, len(levels) + 1)):
        layers = np.empty_like(sums)
        layers[0] = sums[0]
        layers[1:] = sums[1:] - sums[:-1]
    return FieldStack(grid, layers, sums, int(h["seed"]), params, int(h.get("replica", 0)), levels)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns: list[str], rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c) for c in columns]
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


ESTIMATOR_COLUMNS = ["gamma", "p_or_q", "level", "radius", "statistic", "stderr", "replicas", "seed"]
LBM_COLUMNS = ["quantum_t", "x", "y", "classical_t"]
CLOCK_COLUMNS = ["classical_t", "F_value", "level"]
DIAGNOSTIC_COLUMNS = ["n", "d_R_value", "sup_potential", "eta", "exceedance_prob"]
RESULT_KEYS = ["experiment", "gamma", "level", "q_or_p", "slope", "stderr", "expected", "tolerance", "pass"]
