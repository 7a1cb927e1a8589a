"""File output: CSV tables, JSON manifests and binary checkpoints.

All writes go to a temporary file in the target directory followed by
an atomic rename.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .statics import FieldSnapshot

_MAGIC = b"KINKLAB1"
# magic, n, x0, dx, iota_minus, iota_plus, t
_HEADER = struct.Struct("<8sqddiid")


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    """17 significant digits; integers and strings pass through."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    _atomic_write(path, csv_text(header, rows).encode("utf-8"))


def read_csv(path):
    """Return ``(header, array)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        f = float(o)
        if np.isfinite(f):
            return f
        return "inf" if f > 0 else ("-inf" if f < 0 else "nan")
    return o


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def write_snapshot_csv(path, snap: FieldSnapshot):
    """Columns ``x, phi, phidot`` plus a JSON sidecar with grid and sector."""
    path = Path(path)
    write_csv(path, ["x", "phi", "phidot"], zip(snap.x, snap.phi, snap.phidot))
    write_json(path.with_suffix(".json"), {"sector": list(snap.sector), "t": snap.t,
                                           "x0": float(snap.x[0]), "dx": snap.dx, "n": int(snap.x.size)})


def save_checkpoint(path, snap: FieldSnapshot):
    """Header then little-endian float64 ``phi`` and ``phidot``."""
    head = _HEADER.pack(_MAGIC, snap.x.size, float(snap.x[0]), snap.dx,
                        int(snap.sector[0]), int(snap.sector[1]), float(snap.t))
    body = np.ascontiguousarray(snap.phi, dtype="<f8").tobytes() + \
        np.ascontiguousarray(snap.phidot, dtype="<f8").tobytes()
    _atomic_write(path, head + body)


def load_checkpoint(path) -> FieldSnapshot:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, n, x0, dx, im, ip, t = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = _HEADER.size
    phi = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float)
    phidot = np.frombuffer(data, dtype="<f8", count=n, offset=off + 8 * n).astype(float)
    x = x0 + dx * np.arange(n)
    return FieldSnapshot(x, phi, phidot, (im, ip), t)
