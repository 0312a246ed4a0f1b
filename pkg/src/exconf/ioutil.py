"""Small I/O helpers shared across the package (deterministic CSV, binary blocks)."""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """Format a scalar for CSV output.

    Floats use shortest round-trip repr so that repeated runs produce
    byte-identical files.
    """
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    """Write rows of scalars to ``path`` with a header line ('\\n' endings)."""
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def read_csv_matrix(path, skip_header=True) -> np.ndarray:
    """Read a purely numeric CSV into a 2-D float array."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if skip_header:
        lines = lines[1:]
    rows = [[float(v) for v in ln.split(",")] for ln in lines if ln]
    return np.asarray(rows, dtype=float)


# Binary block helpers: little-endian, fixed-width header fields.

def write_block_header(fh, magic: bytes, dims) -> None:
    assert len(magic) == 8
    fh.write(magic)
    fh.write(struct.pack("<q", len(dims)))
    for d in dims:
        fh.write(struct.pack("<q", int(d)))


def read_block_header(fh, magic: bytes):
    got = fh.read(8)
    if got != magic:
        raise ValueError(f"bad magic: expected {magic!r}, got {got!r}")
    (ndim,) = struct.unpack("<q", fh.read(8))
    return [struct.unpack("<q", fh.read(8))[0] for _ in range(ndim)]


def write_f64(fh, arr) -> None:
    np.ascontiguousarray(arr, dtype="<f8").tofile(fh)


def read_f64(fh, count, shape=None) -> np.ndarray:
    arr = np.fromfile(fh, dtype="<f8", count=count)
    if arr.size != count:
        raise ValueError("truncated binary block")
    return arr.reshape(shape) if shape is not None else arr
