"""Field snapshots (HFLD), radial profile CSV and deterministic result tables.

HFLD layout, little-endian: magic ``b"HFLD"``, ``u16`` version (1), ``u16 d``,
``u32 n``, ``f64 L``, ``f64 lambda``, ``f64 N``, ``f64 p``, then ``n^d``
``f64`` values in row-major order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .grid import Field, GridSpec, RadialField, RadialGrid

MAGIC = b"HFLD"
VERSION = 1
_HEADER = struct.Struct("<4sHHIdddd")


class FieldFormatError(ValueError):
    """Malformed or unsupported HFLD file."""


@dataclass(frozen=True)
class FieldMeta:
    lam: float = math.nan
    N: float = math.nan
    p: float = math.nan


def field_to_bytes(u: Field, meta: FieldMeta = FieldMeta()) -> bytes:
    g = u.grid
    head = _HEADER.pack(MAGIC, VERSION, g.d, g.n, g.L, meta.lam, meta.N, meta.p)
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")


def field_from_bytes(buf: bytes) -> tuple[Field, FieldMeta]:
    if len(buf) < _HEADER.size:
        raise FieldFormatError("truncated header")
    magic, ver, d, n, L, lam, N, p = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if ver != VERSION:
        raise FieldFormatError(f"unsupported version {ver}")
    count = n ** d
    need = _HEADER.size + 8 * count
    if len(buf) < need:
        raise FieldFormatError(f"truncated payload: {len(buf) - _HEADER.size} of {8 * count} bytes")
    if len(buf) > need:
        raise FieldFormatError(f"trailing data: {len(buf) - need} bytes after the payload")
    vals = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size)
    grid = GridSpec(d, L, n)
    return Field(grid, vals.astype(np.float64).reshape(grid.shape)), FieldMeta(lam, N, p)


def write_field(path, u: Field, meta: FieldMeta = FieldMeta()) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(u, meta))


def read_field(path) -> tuple[Field, FieldMeta]:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_io(mode: str, path, u: Field | None = None, meta: FieldMeta = FieldMeta()):
    """``field_io("write", path, u, meta)`` or ``field_io("read", path) -> (Field, FieldMeta)``."""
    if mode == "write":
        if u is None:
            raise ValueError("write needs a field")
        write_field(path, u, meta)
        return u, meta
    if mode == "read":
        return read_field(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def format_value(v) -> str:
    """17 significant digits for floats, ``str`` otherwise (``None`` -> empty)."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (tuple, list)):
        return ";".join(format_value(x) for x in v)
    return str(v)


def rows_to_csv(rows, columns=None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_radial_csv(path, u: RadialField) -> None:
    rows = ({"r": r, "value": v} for r, v in zip(u.rgrid.r, u.values))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, ["r", "value"]))


def read_radial_csv(path, d: int = 3) -> RadialField:
    """Read an ``r,value`` profile written on a midpoint mesh."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["r", "value"]:
            raise ValueError(f"radial CSV must start with 'r,value', got {header}")
        data = np.array([[float(a), float(b)] for a, b in reader], dtype=np.float64)
    r, v = data[:, 0], data[:, 1]
    m = r.size
    dr = 2.0 * r[0]
    if not np.allclose(np.diff(r), dr, rtol=1e-9, atol=0.0):
        raise ValueError("radial CSV nodes are not a midpoint mesh (j + 1/2) dr")
    return RadialField(RadialGrid(m, m * dr, d), v)


TABLE_COLUMNS = {
    "diagram": ["N", "lambda", "diagnosis", "energy", "residual"],
    "scaling": ["lambda", "e", "T", "lambda_P", "mu", "e_scaled", "diagnosis", "exponent"],
}


def emit_tables(results: dict, out_dir, config_hash: str = "", extra_files=()) -> list[str]:
    """Write ``results`` (``name -> list of row dicts``) as ``name.csv`` plus a manifest.

    Column order is fixed per known table (``diagram``, ``scaling``) and
    otherwise follows the first row.  ``scaling`` rows are sorted by ``lambda``.
    ``extra_files`` (paths inside ``out_dir``, e.g. snapshots) are listed in the
    manifest too.  Returns the written file names, manifest last.

    Raises
    ------
    OSError
        If ``out_dir`` cannot be created or written.
    """
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    written = []
    for name in sorted(results):
        rows = list(results[name])
        if name == "scaling":
            rows.sort(key=lambda r: r["lambda"])
        cols = TABLE_COLUMNS.get(name)
        fname = f"{name}.csv"
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8", newline="") as fh:
            fh.write(rows_to_csv(rows, cols))
        written.append(fname)
    entries = []
    for fname in written + sorted(os.path.relpath(p, out_dir) if os.path.isabs(p) else p for p in extra_files):
        with open(os.path.join(out_dir, fname), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        entries.append({"file": fname, "sha256": digest, "config_hash": config_hash})
    with open(os.path.join(out_dir, "manifest.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(entries, ["file", "sha256", "config_hash"]))
    return written + ["manifest.csv"]


__all__ = ["FieldMeta", "FieldFormatError", "write_field", "read_field", "field_to_bytes",
           "field_from_bytes", "write_radial_csv", "read_radial_csv", "rows_to_csv", "format_value",
           "emit_tables", "TABLE_COLUMNS", "field_io"]
