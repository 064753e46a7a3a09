"""Deterministic CSV/JSON artifacts. Floats are written with ``repr`` (shortest round-trip)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .core import DensityField, Grid2D, ParticleCloud

DENSITY_HEADER = "i,j,x_center,y_center,mass,physical_density"
VALUE_HEADER = "i,j,x_center,y_center,value"


def _rows(cols) -> str:
    # tolist() yields Python floats, whose str() is the shortest round-trip repr
    return "\n".join(",".join(map(str, r)) for r in zip(*(c.tolist() for c in cols)))


def _grid_cols(grid: Grid2D):
    n = grid.n
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    X, Y = grid.mesh()
    return [I.ravel(), J.ravel(), X.ravel(), Y.ravel()]


def write_density_csv(path, rho: DensityField) -> None:
    cols = _grid_cols(rho.grid) + [rho.mass.ravel(), rho.physical_density.ravel()]
    Path(path).write_text(DENSITY_HEADER + "\n" + _rows(cols) + "\n")


def write_value_csv(path, values: np.ndarray, grid: Grid2D) -> None:
    cols = _grid_cols(grid) + [np.asarray(values, dtype=float).ravel()]
    Path(path).write_text(VALUE_HEADER + "\n" + _rows(cols) + "\n")


def _read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    return [h.strip() for h in header], data


def _grid_from(data: np.ndarray, header: list[str]) -> tuple[Grid2D, np.ndarray, np.ndarray]:
    i = data[:, header.index("i")].astype(int)
    j = data[:, header.index("j")].astype(int)
    n = int(i.max()) + 1
    x = data[:, header.index("x_center")]
    h = (x.max() - x.min()) / (n - 1)
    L = n * h / 2
    grid = Grid2D(float(np.round(L, 12)), n)
    return grid, i, j


def read_value_csv(path) -> tuple[Grid2D, np.ndarray]:
    header, data = _read_table(path)
    grid, i, j = _grid_from(data, header)
    out = np.zeros((grid.n, grid.n))
    out[i, j] = data[:, header.index("value")]
    return grid, out


def read_measure_csv(path) -> DensityField | ParticleCloud:
    """A density CSV (columns as written by :func:`write_density_csv`) or a cloud CSV with x,y columns."""
    header, data = _read_table(path)
    if "mass" in header:
        grid, i, j = _grid_from(data, header)
        mass = np.zeros((grid.n, grid.n))
        mass[i, j] = data[:, header.index("mass")]
        return DensityField(grid, mass)
    if {"x", "y"} <= set(header):
        return ParticleCloud(data[:, [header.index("x"), header.index("y")]])
    raise ValueError(f"{path}: expected density columns ({DENSITY_HEADER}) or x,y")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in (v.tolist() if isinstance(v, np.ndarray) else v)]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_table(path, header: str, rows) -> None:
    Path(path).write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
