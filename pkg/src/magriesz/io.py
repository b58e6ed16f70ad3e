"""Report and field serialization: canonical JSON, CSV tables and node fields."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = "1"


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``inf``, ``-inf``, ``nan``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if obj is None or isinstance(obj, (str, int)):
        return obj
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(payload) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2) + "\n"


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload))
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def save_field(path, values: np.ndarray) -> Path:
    """``.npy`` for any field; ``.csv`` for real or complex 2D fields (complex as re,im pairs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    if path.suffix == ".npy":
        np.save(path, values)
        return path
    if values.ndim != 2:
        raise ValueError("CSV fields must be two-dimensional; use .npy")
    if np.iscomplexobj(values):
        rows = np.empty((values.shape[0], 2 * values.shape[1]))
        rows[:, 0::2], rows[:, 1::2] = values.real, values.imag
        np.savetxt(path, rows, delimiter=",", header="complex", comments="# ")
    else:
        np.savetxt(path, values, delimiter=",", header="real", comments="# ")
    return path


def load_field(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    with path.open() as fh:
        first = fh.readline()
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if "complex" in first:
        return data[:, 0::2] + 1j * data[:, 1::2]
    return data


def save_decomposition(dirpath, dec, certificate: dict | None = None) -> Path:
    """Manifest JSON plus the cube table and the good/bad fields as CSV."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    table = dec.cube_table()
    write_csv(d / "cubes.csv", ["k", "corner", "size", "R", "type"],
              [[r["k"], " ".join(map(str, r["corner"])), r["size"], r["R"], r["type"]] for r in table])
    fields = {"g": dec.g, "bad_sum": dec.bad_sum()}
    names = {}
    for name, arr in fields.items():
        ext = ".csv" if arr.ndim == 2 else ".npy"
        save_field(d / f"{name}{ext}", arr)
        names[name] = f"{name}{ext}"
    manifest = {"schema": SCHEMA_VERSION, "grid": dec.grid.to_dict(), "alpha": dec.alpha,
                "p": dec.p, "cubes": len(table), "files": {"cubes": "cubes.csv", **names},
                "certificate": certificate if certificate is not None else dec.certificate}
    return write_json(d / "manifest.json", manifest)
