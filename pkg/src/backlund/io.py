"""CSV, SBK binary and JSON writers for trajectories, ensembles, scans and reports.

Floats are written with ``repr``, the shortest string that round-trips to
the same double, with ``.`` as decimal separator regardless of locale.

SBK layout: the 5-byte magic ``SBKL1``, an 80-byte space-padded JSON header
such as ``{"fields": "txu", "shape": [n_paths, n_times, 3]}``, then the
array as little-endian float64 in C order.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SBK_MAGIC = b"SBKL1"
SBK_HEADER = 80


def _fmt(v) -> str:
    return repr(float(v))


def write_rows(path, header, rows):
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(v) for v in row)
                     + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        header = fh.readline().strip().split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
    return header, data.reshape(-1, len(header))


def write_trajectory_csv(path, traj):
    write_rows(path, ("t", "x", "u"), zip(traj.times, traj.xs, traj.us))


def write_eigen_scan_csv(path, xs, psis, drifts, residuals):
    write_rows(path, ("x", "psi", "drift", "eigen_residual"), zip(xs, psis, drifts, residuals))


def _ensemble_array(ens) -> tuple[np.ndarray, str]:
    n, m = ens.xs.shape
    t = np.broadcast_to(ens.times, (n, m))
    if ens.us is None:
        return np.stack([t, ens.xs], axis=-1), "tx"
    return np.stack([t, ens.xs, ens.us], axis=-1), "txu"


def write_ensemble_csv(path, ens):
    arr, fields = _ensemble_array(ens)
    header = ("path",) + tuple(fields)
    rows = ((i,) + tuple(arr[i, j]) for i in range(arr.shape[0]) for j in range(arr.shape[1]))
    write_rows(path, header, rows)


def write_sbk(path, arr: np.ndarray, fields: str):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = json.dumps({"fields": fields, "shape": list(arr.shape)}, sort_keys=True).encode()
    if len(head) > SBK_HEADER:
        raise ValueError("SBK header too long")
    with Path(path).open("wb") as fh:
        fh.write(SBK_MAGIC)
        fh.write(head.ljust(SBK_HEADER, b" "))
        fh.write(arr.tobytes())


def read_sbk(path) -> tuple[np.ndarray, str]:
    raw = Path(path).read_bytes()
    if raw[:len(SBK_MAGIC)] != SBK_MAGIC:
        raise ValueError("not an SBK file")
    off = len(SBK_MAGIC)
    head = json.loads(raw[off:off + SBK_HEADER].decode().strip())
    arr = np.frombuffer(raw, dtype="<f8", offset=off + SBK_HEADER)
    return arr.reshape(head["shape"]), head["fields"]


def write_ensemble(path, ens):
    """Write by extension: ``.csv`` (path,t,x[,u]) or ``.sbk`` binary."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        write_ensemble_csv(path, ens)
    elif suffix == ".sbk":
        arr, fields = _ensemble_array(ens)
        write_sbk(path, arr, fields)
    else:
        raise ValueError(f"unknown ensemble format {suffix!r}; use .csv or .sbk")


def jsonable(obj):
    """Convert numpy scalars, tuples and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, shortest-repr floats."""
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))
