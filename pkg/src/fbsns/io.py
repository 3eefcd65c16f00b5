"""Binary and CSV serialization of sampled fields.

Binary layout (little endian)::

    offset  size  content
    0       4     magic b"FBSD"
    4       4     uint32 format version (1)
    8       4     uint32 dim
    12      4     uint32 points per axis n
    16      8     float64 period L
    24      4     uint32 number of components
    28      4     reserved (zero)
    32      ...   float64 values, component-major then row-major over axes
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .fields import Grid, ScalarField, VectorField

MAGIC = b"FBSD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdI4x")
assert _HEADER.size == 32


def _as_components(f) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.values[None]
    return f.components


def to_bytes(f: ScalarField | VectorField) -> bytes:
    g = f.grid
    comps = _as_components(f)
    header = _HEADER.pack(MAGIC, VERSION, g.dim, g.n, g.L, comps.shape[0])
    return header + np.ascontiguousarray(comps, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> ScalarField | VectorField:
    if len(data) < _HEADER.size:
        raise ValueError("truncated field file: missing header")
    magic, version, dim, n, L, ncomp = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported field format version {version}")
    g = Grid(dim, n, L)
    expected = ncomp * g.size * 8
    body = data[_HEADER.size :]
    if len(body) != expected:
        raise ValueError(f"field payload has {len(body)} bytes, expected {expected}")
    arr = np.frombuffer(body, dtype="<f8").reshape((ncomp,) + g.shape)
    if ncomp == 1 and dim != 1:
        return ScalarField(g, arr[0])
    if ncomp == dim:
        return VectorField(g, arr)
    if ncomp == 1:
        return ScalarField(g, arr[0])
    raise ValueError(f"{ncomp} components do not match dim {dim}")


def save_field(path, f) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(f))
    return path


def load_field(path) -> ScalarField | VectorField:
    return from_bytes(Path(path).read_bytes())


def write_field_csv(path, f, names=None) -> Path:
    """One row per node: index columns ``i0..`` then one column per component."""
    path = Path(path)
    comps = _as_components(f)
    g = f.grid
    if names is None:
        names = ["value"] if comps.shape[0] == 1 else [f"u{a}" for a in range(comps.shape[0])]
    idx = np.indices(g.shape).reshape(g.dim, -1).T
    flat = comps.reshape(comps.shape[0], -1).T
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{a}" for a in range(g.dim)] + list(names))
        for ix, row in zip(idx, flat):
            w.writerow(list(ix) + [repr(float(v)) for v in row])
    return path


def write_table_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return path
