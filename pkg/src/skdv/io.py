"""On-disk formats: columnar text, binary trajectory frames, JSON reports.

Binary trajectory layout (all little-endian)::

    offset  size  field
    0       8     magic  b"SKDVTRJ\\0"
    8       4     u32 format version (1)
    12      4     u32 m
    16      8     u64 n_frames
    24      8     f64 x1
    32      8     f64 x2
    40      ...   n_frames frames, each f64 t followed by 2m+1 f64 coefficients

Nothing written here carries a timestamp, so identical inputs give
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .spectral import SpectralGrid

MAGIC = b"SKDVTRJ\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIQdd")


class FormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


# -- columnar text ------------------------------------------------------------


def write_table(path, header: list, rows, comments: dict | None = None) -> Path:
    """Whitespace-separated columns with ``#`` metadata lines."""
    path = Path(path)
    lines = [f"# {k} {v}" for k, v in (comments or {}).items()]
    lines.append("# " + " ".join(header))
    for row in rows:
        lines.append(" ".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path) -> tuple[dict, list, np.ndarray]:
    meta, header, rows = {}, [], []
    lines = Path(path).read_text().splitlines()
    comment = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    if comment:
        header = comment[-1].split()
        for c in comment[:-1]:
            k, _, v = c.partition(" ")
            meta[k] = v
    for ln in lines:
        if ln.strip() and not ln.startswith("#"):
            rows.append([float(v) for v in ln.split()])
    return meta, header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_trajectory_text(path, grid: SpectralGrid, times, states) -> Path:
    header = ["t"] + [f"c{i}" for i in range(grid.dim)]
    meta = {"format": "skdv-trajectory-text 1", "x1": _fmt(grid.x1), "x2": _fmt(grid.x2), "m": grid.m}
    return write_table(path, header, (np.concatenate([[t], s]) for t, s in zip(times, states)), meta)


def read_trajectory_text(path):
    meta, header, data = read_table(path)
    if meta.get("format") != "skdv-trajectory-text 1":
        raise FormatError(f"{path}: not a trajectory text file")
    return {"x1": float(meta["x1"]), "x2": float(meta["x2"]), "m": int(meta["m"])}, data[:, 0], data[:, 1:]


# -- binary frames --------------------------------------------------------------


def write_frames(path, grid: SpectralGrid, times, states) -> Path:
    path = Path(path)
    times = np.asarray(times, dtype="<f8")
    states = np.asarray(states, dtype="<f8").reshape(len(times), grid.dim)
    body = np.empty((len(times), grid.dim + 1), dtype="<f8")
    body[:, 0] = times
    body[:, 1:] = states
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.m, len(times), grid.x1, grid.x2))
        fh.write(body.tobytes())
    return path


def read_frames(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, m, n, x1, x2 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dim = 2 * m + 1
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * (dim + 1):
        raise FormatError(f"{path}: expected {n} frames of {dim + 1} values, found {body.size} values")
    body = body.reshape(n, dim + 1)
    return {"x1": x1, "x2": x2, "m": m}, body[:, 0].copy(), body[:, 1:].copy()


# -- structured reports -----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
