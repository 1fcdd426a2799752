"""Binary field snapshot format shared by the solvers.

Layout (little-endian, no padding):

    header:  L          float64
             N          uint32
             components uint8     (1 scalar, 2 vector)
             time       float64
    data:    components * N * N  float64, row-major, component planes in order

The 21-byte header is followed immediately by the samples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fields import GridField

__all__ = ["write_snapshot", "read_snapshot", "HEADER_FORMAT"]

HEADER_FORMAT = "<dIBd"
_HEADER_SIZE = struct.calcsize(HEADER_FORMAT)


def write_snapshot(path, field: GridField, time: float) -> None:
    path = Path(path)
    components = 2 if field.is_vector else 1
    header = struct.pack(HEADER_FORMAT, field.L, field.N, components, time)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.data, dtype="<f8").tobytes())
    tmp.replace(path)


def read_snapshot(path) -> tuple[GridField, float]:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_SIZE)
        L, N, components, time = struct.unpack(HEADER_FORMAT, header)
        raw = np.frombuffer(fh.read(), dtype="<f8")
    expected = components * N * N
    if raw.size != expected:
        raise ValueError(
            f"snapshot {path} carries {raw.size} samples, expected {expected}"
        )
    shape = (N, N) if components == 1 else (2, N, N)
    return GridField(L, raw.reshape(shape).copy()), time
