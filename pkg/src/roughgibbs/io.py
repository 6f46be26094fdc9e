"""Path serialization: CSV tables and a JSON-headed binary block.

Binary layout: an unsigned 64-bit little-endian header length ``h``, then
``h`` bytes of UTF-8 JSON ``{"dim", "level", "interval", "count"}``, then
``count * (2**level + 1) * dim`` little-endian float64 values in C order.
"""
from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .rough import GridPath

__all__ = ["write_path_csv", "read_path_csv", "write_block", "read_block", "fmt"]


def fmt(x) -> str:
    """Round-trip float formatting with 17 significant digits."""
    return "%.17g" % float(x)


def write_path_csv(path: GridPath, fname) -> None:
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(path.dim)])
        for t, row in zip(path.times, path.values):
            w.writerow([fmt(t)] + [fmt(v) for v in row])


def read_path_csv(fname) -> GridPath:
    data = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    n = len(t) - 1
    level = int(round(np.log2(n))) if n > 0 else 0
    if 2 ** level != n:
        raise ValueError("number of grid steps is not a power of two")
    return GridPath((float(t[0]), float(t[-1])), level, data[:, 1:])


def write_block(values, interval, level: int, fname) -> None:
    """Write an ensemble of shape ``(count, 2**level + 1, dim)``."""
    values = np.asarray(values, dtype="<f8")
    if values.ndim == 2:
        values = values[None]
    count, n1, dim = values.shape
    if n1 != 2 ** level + 1:
        raise ValueError("values do not match the grid level")
    header = json.dumps({"dim": dim, "level": int(level), "interval": [float(v) for v in interval],
                         "count": count}, sort_keys=True).encode()
    with open(fname, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(values).tobytes())


def read_block(fname) -> tuple:
    """Return ``(values, header)``."""
    with open(fname, "rb") as fh:
        (h,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(h).decode())
        raw = fh.read()
    shape = (header["count"], 2 ** header["level"] + 1, header["dim"])
    values = np.frombuffer(raw, dtype="<f8")
    if values.size != np.prod(shape):
        raise ValueError("binary block is truncated or malformed")
    return values.reshape(shape).astype(float), header
