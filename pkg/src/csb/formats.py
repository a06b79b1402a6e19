"""Dataset and tensor file formats.

Two on-disk layouts are supported:

* CSV with a header row of column (node) names.
* A raw little-endian float32 matrix behind a 16-byte header::

      bytes 0-3    magic b"CSBD"
      bytes 4-7    u32 row count n
      bytes 8-11   u32 column count d
      bytes 12-15  u32 reserved, written as 0

  followed by n*d float32 values in row-major order.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CSBD"
HEADER = struct.Struct("<4sIII")


def write_f32(path, matrix) -> None:
    arr = np.asarray(matrix, dtype="<f4")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, n, d, 0))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_f32(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: file too short for header")
    magic, n, d, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size, count=n * d)
    return data.reshape(n, d).astype(np.float64)


def write_csv(path, matrix, names) -> None:
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    if arr.shape[1] != len(names):
        raise ValueError(f"{len(names)} names for {arr.shape[1]} columns")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    names = [c.strip() for c in rows[0]]
    body = [r for r in rows[1:] if r]
    data = np.array([[float(v) for v in r] for r in body], dtype=float)
    if data.size == 0:
        data = np.zeros((0, len(names)))
    return data, names


def load_matrix(path) -> tuple[np.ndarray, list[str] | None]:
    """Load a dataset from CSV or the binary format, chosen by content."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_f32(path), None
    return read_csv(path)
