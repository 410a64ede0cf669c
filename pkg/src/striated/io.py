"""Binary field snapshots, key = value configs and manifests, CSV helpers."""

from __future__ import annotations

import configparser
import os
import struct
from pathlib import Path

import numpy as np

from .grid import Grid

MAGIC = b"STRIEUL1"
_HEADER = struct.Struct("<8sqdd")   # magic, n, spacing, origin: 32 bytes


def write_snapshot(path, field: np.ndarray, grid: Grid) -> None:
    """Header (magic, n, spacing, origin) then row-major little-endian float64."""
    a = np.ascontiguousarray(field, dtype="<f8")
    if a.shape[:2] != (grid.n, grid.n):
        raise ValueError("field does not match the grid")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.n, grid.spacing, grid.origin))
        fh.write(a.tobytes(order="C"))


def read_snapshot(path) -> tuple[np.ndarray, Grid]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, n, spacing, origin = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError("not a field snapshot (bad magic)")
    payload = len(raw) - _HEADER.size
    if n <= 0 or payload % (8 * n * n):
        raise ValueError("snapshot payload does not match its header")
    ncomp = payload // (8 * n * n)
    a = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    a = a.reshape((n, n) if ncomp == 1 else (n, n) + _comp_shape(ncomp))
    grid = Grid(int(n), 0.5 * n * spacing)
    if not np.isclose(grid.origin, origin, rtol=0, atol=1e-12 * max(1.0, abs(origin))):
        raise ValueError("snapshot origin is not centred")
    return a, grid


def _comp_shape(ncomp: int) -> tuple:
    return (2, 2) if ncomp == 4 else (ncomp,)


def fmt(x) -> str:
    return "%.17g" % float(x)


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ValueError("empty CSV")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return header, data


# ----------------------------------------------------------------------------
# config / manifest

class ConfigError(ValueError):
    pass


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    return cp


def write_manifest(path, sections: dict[str, dict]) -> None:
    """Plain-text manifest, one ``[section]`` per module, ``key = value``."""
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        for k, v in kv.items():
            out.append(f"{k} = {fmt(v) if isinstance(v, float) else v}")
        out.append("")
    Path(path).write_text("\n".join(out))
