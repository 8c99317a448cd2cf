"""Binary checkpoints of a State and its Params.

Layout (all integers little-endian)::

    magic    8 bytes  b"PKSNSCKP"
    version  uint32
    hlen     uint64   length of the header
    header   hlen bytes of UTF-8 JSON, keys sorted, no whitespace
    plen     uint64   length of the payload
    payload  float64 little-endian, one (Nx, Ny, Nz) C-order array per
             field in the order listed in the header

Saving a loaded checkpoint reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..dynamics import Params, State
from ..errors import CheckpointError, CheckpointVersionError, CorruptCheckpointError
from ..field import Grid, PhysicalField

MAGIC = b"PKSNSCKP"
VERSION = 1
_DTYPE = np.dtype("<f8")


def _header(s: State, p: Params) -> dict:
    g = s.grid
    return {
        "axis_order": ["x", "y", "z"],
        "clipped_mass": float(s.clipped_mass),
        "dt": None if s.dt is None else float(s.dt),
        "dtype": "<f8",
        "fields": list(State.FIELDS),
        "grid": {"Nx": g.Nx, "Ny": g.Ny, "Nz": g.Nz},
        "params": p.to_dict(),
        "steps": int(s.steps),
        "t": float(s.t),
    }


def dumps_checkpoint(s: State, p: Params) -> bytes:
    header = json.dumps(_header(s, p), sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    payload = b"".join(
        np.ascontiguousarray(getattr(s, name).values, dtype=_DTYPE).tobytes() for name in State.FIELDS
    )
    return b"".join(
        [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header, struct.pack("<Q", len(payload)), payload]
    )


def save_checkpoint(path, s: State, p: Params) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps_checkpoint(s, p)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise CorruptCheckpointError(f"truncated checkpoint while reading {what}")
    return buf[pos : pos + n], pos + n


def read_header(buf: bytes) -> tuple[dict, int]:
    """Parse magic, version and header; returns (header, payload offset)."""
    magic, pos = _take(buf, 0, 8, "magic")
    if magic != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    raw, pos = _take(buf, pos, 4, "version")
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    raw, pos = _take(buf, pos, 8, "header length")
    (hlen,) = struct.unpack("<Q", raw)
    raw, pos = _take(buf, pos, hlen, "header")
    try:
        header = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("unreadable checkpoint header") from exc
    return header, pos


def loads_checkpoint(buf: bytes):
    header, pos = read_header(buf)
    raw, pos = _take(buf, pos, 8, "payload length")
    (plen,) = struct.unpack("<Q", raw)
    try:
        g = header["grid"]
        grid = Grid(int(g["Nx"]), int(g["Ny"]), int(g["Nz"]))
        names = header["fields"]
        params = Params(**header["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"invalid checkpoint header: {exc}") from exc
    if tuple(names) != State.FIELDS or header.get("dtype") != "<f8":
        raise CorruptCheckpointError("checkpoint field list or dtype not understood")
    size = int(np.prod(grid.shape)) * _DTYPE.itemsize
    if plen != size * len(names):
        raise CorruptCheckpointError(f"payload length {plen} does not match the grid ({size * len(names)})")
    payload, end = _take(buf, pos, plen, "payload")
    if end != len(buf):
        raise CorruptCheckpointError(f"{len(buf) - end} trailing bytes after payload")
    arrays = np.frombuffer(payload, dtype=_DTYPE).reshape((len(names),) + grid.shape)
    if not np.all(np.isfinite(arrays)):
        raise CorruptCheckpointError("checkpoint payload contains NaN or Inf")
    t = header["t"]
    if not (isinstance(t, (int, float)) and math.isfinite(t)):
        raise CorruptCheckpointError("invalid time in checkpoint")
    fields = {name: PhysicalField(grid, arrays[i].astype(float, copy=True)) for i, name in enumerate(names)}
    dt = header.get("dt")
    state = State(
        t=float(t),
        dt=None if dt is None else float(dt),
        clipped_mass=float(header.get("clipped_mass", 0.0)),
        steps=int(header.get("steps", 0)),
        **fields,
    )
    return state, params


def load_checkpoint(path):
    """(State, Params) from a checkpoint file.

    Raises
    ------
    CheckpointVersionError
        Unsupported format version.
    CorruptCheckpointError
        Bad magic, truncated or over-long data, malformed header, or a
        payload containing NaN/Inf.
    """
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    return loads_checkpoint(buf)
