#!/usr/bin/env python3
"""
Field and grid persistence.

Formats:
  CSV     header ``index,value``; values at 17 significant digits so that
          float() recovers every value exactly.
  binary  16-byte little-endian header (magic ``LGD1``, u32 version, u64
          count) followed by ``count`` float64 values.
  grid    JSON layout of grid.Grid.to_dict, validated on load.

All writes are atomic: write ``<path>.tmp`` then ``os.replace``.
"""

import csv
import json
import logging
import os
import struct
from typing import Any, Callable, Dict, Sequence

import numpy as np

from errors import InvalidArgument
from grid import Grid, validate_grid_dict

logger = logging.getLogger("lsgrad.field_io")

BINARY_MAGIC = b"LGD1"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class PersistenceError(Exception):
    """Raised when persistence operations fail"""
    pass


def atomic_write(path: str, mode: str, writer: Callable[[Any], None]) -> None:
    temp_path = path + ".tmp"
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
        with open(temp_path, mode, **kwargs) as f:
            writer(f)
        os.replace(temp_path, path)
    except Exception as e:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise PersistenceError(f"Failed to write {path}: {e}")


def _as_vector(values) -> np.ndarray:
    arr = np.asarray(getattr(values, "values", values), dtype=float)
    if arr.ndim != 1:
        raise PersistenceError(f"fields must be 1-D, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def save_field_csv(path: str, values) -> None:
    arr = _as_vector(values)

    def write(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(arr.tolist()):
            w.writerow([i, format(v, ".17g")])

    atomic_write(path, "w", write)


def load_field_csv(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise PersistenceError(f"Failed to read {path}: {e}")
    if not rows or [c.strip() for c in rows[0]] != ["index", "value"]:
        raise PersistenceError(f"{path}: missing 'index,value' header")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise PersistenceError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            idx = int(row[0])
            val = float(row[1])
        except ValueError as e:
            raise PersistenceError(f"{path}:{lineno}: {e}")
        if idx != len(values):
            raise PersistenceError(f"{path}:{lineno}: index {idx} out of sequence")
        values.append(val)
    return np.array(values, dtype=float)


def save_table_csv(path: str, columns: Dict[str, Sequence[float]]) -> None:
    """Multi-column CSV with a header row; numbers at 17 significant digits."""
    names = list(columns)
    lengths = {len(columns[name]) for name in names}
    if len(lengths) > 1:
        raise PersistenceError(f"{path}: columns have different lengths {sorted(lengths)}")

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, str):
            return v
        return format(float(v), ".17g")

    def write(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(columns[name] for name in names)):
            w.writerow([cell(v) for v in row])

    atomic_write(path, "w", write)


# ---------------------------------------------------------------------------
# Binary
# ---------------------------------------------------------------------------

def save_field_binary(path: str, values) -> None:
    arr = _as_vector(values).astype("<f8")

    def write(f):
        f.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, arr.size))
        f.write(arr.tobytes())

    atomic_write(path, "wb", write)


def load_field_binary(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise PersistenceError(f"Failed to read {path}: {e}")
    if len(blob) < _HEADER.size:
        raise PersistenceError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(blob)
    if magic != BINARY_MAGIC:
        raise PersistenceError(f"{path}: bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise PersistenceError(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * count:
        raise PersistenceError(f"{path}: expected {count} values, payload has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f8").astype(float)


def save_field(path: str, values) -> None:
    """Dispatch on extension: .csv or binary (.bin / .lgd)."""
    if path.lower().endswith(".csv"):
        save_field_csv(path, values)
    else:
        save_field_binary(path, values)


def load_field(path: str) -> np.ndarray:
    if path.lower().endswith(".csv"):
        return load_field_csv(path)
    return load_field_binary(path)


# ---------------------------------------------------------------------------
# JSON documents and grids
# ---------------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def save_json(path: str, document: Dict[str, Any]) -> None:
    atomic_write(path, "w", lambda f: json.dump(document, f, indent=2, sort_keys=True,
                                                 default=_json_default))


def load_json(path: str) -> Dict[str, Any]:
    try:
        if not os.path.exists(path):
            raise PersistenceError(f"File not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise PersistenceError(f"Invalid JSON in {path}: {e}")
    except PersistenceError:
        raise
    except Exception as e:
        raise PersistenceError(f"Failed to load {path}: {e}")


def save_grid(path: str, grid: Grid) -> None:
    document = grid.to_dict()
    errors = validate_grid_dict(document)
    if errors:
        raise PersistenceError("grid failed schema validation: " + "; ".join(errors))
    save_json(path, document)
    logger.info(f"IO | GRID_SAVED | path={path} | nodes={grid.num_nodes}")


def load_grid(path: str) -> Grid:
    document = load_json(path)
    try:
        return Grid.from_dict(document)
    except InvalidArgument as e:
        raise PersistenceError(f"{path}: {e}")
