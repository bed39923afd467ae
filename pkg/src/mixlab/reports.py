"""Deterministic JSON/CSV/binary emission for audits, solves, and verifications."""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from pathlib import Path

import numpy as np


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: to_jsonable(v) for k, v in dataclasses.asdict(obj).items()
                if not k.startswith("_")}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and (obj != obj):
        return "nan"
    if isinstance(obj, float) and obj in (float("inf"), float("-inf")):
        return "inf" if obj > 0 else "-inf"
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=1,
                      separators=(",", ": ")) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def flatten(obj, prefix=""):
    """Flat (keypath, value) pairs over nested dicts/lists of scalars."""
    out = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            out.extend(flatten(obj[k], f"{prefix}{k}." if prefix or True else k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            out.extend(flatten(v, f"{prefix}{i}."))
    else:
        out.append((prefix[:-1], obj))
    return out


def write_solution_csv(path, field, exact_fn=None):
    """(t, x[, y], u[, u_exact]) rows, row-major cells within each level."""
    g = field.grid
    cent = g.centers()
    times = g.times()
    header = ["t", "x"] + (["y"] if g.dim == 2 else []) + ["u"]
    if exact_fn is not None:
        header += ["u_exact", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n, t in enumerate(times):
            sl = field.slice(n)
            ex = exact_fn(cent, t) if exact_fn is not None else None
            for i in range(g.ncells):
                row = [repr(float(t))] + [repr(float(c)) for c in cent[i]] + \
                      [repr(float(sl[i]))]
                if ex is not None:
                    row += [repr(float(ex[i])), repr(float(sl[i] - ex[i]))]
                w.writerow(row)


MAGIC = b"MXL1"


def write_solution_binary(path, field):
    """Header: magic, int32 dim, shape per axis, n_levels; then row-major
    float64 values (cell-major, level fastest)."""
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<i", g.dim))
        for s in g.shape:
            fh.write(struct.pack("<i", s))
        fh.write(struct.pack("<i", g.n_levels))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_solution_binary(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("bad magic")
    off = 4
    dim, = struct.unpack_from("<i", raw, off); off += 4
    shape = []
    for _ in range(dim):
        s, = struct.unpack_from("<i", raw, off); off += 4
        shape.append(s)
    n_levels, = struct.unpack_from("<i", raw, off); off += 4
    ncells = int(np.prod(shape))
    vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape(ncells, n_levels)
    return tuple(shape), n_levels, vals


EXACT_SOLUTIONS = {
    "heat_sin": lambda pts, t: np.exp(-np.pi**2 * t) * np.sin(np.pi * np.atleast_2d(pts)[:, 0]),
}
