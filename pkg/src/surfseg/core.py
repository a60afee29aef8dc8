"""Domain types, errors and elementary probability-map operations.

Coordinates: rows are positions along a column (0..n_rows-1), columns are the
surface's horizontal index. Surface positions are continuous 0-based row
coordinates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SurfSegError(Exception):
    """Base class for all package errors."""


class InputError(SurfSegError, ValueError):
    """Invalid user input (maps to CLI exit code 2)."""


class NumericalError(SurfSegError, ArithmeticError):
    """Numerical failure (maps to CLI exit code 3)."""


class NegativeValue(InputError):
    def __init__(self, row, col):
        super().__init__(f"negative probability at row {row}, col {col}")
        self.row, self.col = row, col


class NonFinite(InputError):
    def __init__(self, row, col):
        super().__init__(f"non-finite value at row {row}, col {col}")
        self.row, self.col = row, col


class DegenerateColumn(InputError):
    def __init__(self, col):
        super().__init__(f"column {col} is entirely zero")
        self.col = col


class ConstantColumn(InputError):
    def __init__(self, col):
        super().__init__(f"column {col} has zero range")
        self.col = col


class LengthMismatch(InputError):
    pass


class Kind(enum.Enum):
    IMAGE = "image"
    PROBMAP = "probmap"


@dataclass(frozen=True)
class Grid2:
    """Dense 2-D field, ``data[row, col]``."""

    data: np.ndarray
    kind: Kind = Kind.IMAGE

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError(f"Grid2 needs a non-empty 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def column(self, i) -> np.ndarray:
        return self.data[:, i]


@dataclass(frozen=True)
class GaussianField:
    gamma: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64).ravel()
        s = np.asarray(self.sigma, dtype=np.float64).ravel()
        if g.shape != s.shape:
            raise LengthMismatch(f"gamma has {g.size} entries, sigma has {s.size}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "sigma", s)

    @property
    def n_cols(self) -> int:
        return self.gamma.size


@dataclass(frozen=True)
class SurfaceTrace:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        if not np.all(np.isfinite(x)):
            raise InputError("surface trace contains non-finite entries")
        object.__setattr__(self, "x", x)

    @property
    def n_cols(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class PixelSpacing:
    row_spacing: float = 1.0
    unit_label: str = field(default="px")

    def __post_init__(self):
        if not self.row_spacing > 0:
            raise InputError("row_spacing must be positive")


def validate_probmap(g: Grid2) -> Grid2:
    """Check that ``g`` is a usable probability map and return it unchanged."""
    d = g.data
    bad = ~np.isfinite(d)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFinite(int(r), int(c))
    neg = d < 0
    if neg.any():
        r, c = np.argwhere(neg)[0]
        raise NegativeValue(int(r), int(c))
    zero_cols = np.flatnonzero(~d.any(axis=0))
    if zero_cols.size:
        raise DegenerateColumn(int(zero_cols[0]))
    return g


def column_normalize(g: Grid2) -> Grid2:
    """Linearly map every column onto [0, 1]."""
    lo = g.data.min(axis=0)
    hi = g.data.max(axis=0)
    rng = hi - lo
    flat = np.flatnonzero(rng == 0)
    if flat.size:
        raise ConstantColumn(int(flat[0]))
    return Grid2((g.data - lo) / rng, Kind.PROBMAP)


def gaussian_columns(centers, n_rows: int, sigma: float) -> np.ndarray:
    """Columns of a sampled Gaussian around each centre, each summing to 1.

    Mass beyond rows 0..n_rows-1 is simply not sampled.
    """
    j = np.arange(n_rows, dtype=np.float64)[:, None]
    d = np.exp(-((j - np.asarray(centers, dtype=np.float64)[None, :]) ** 2) / (2.0 * sigma**2))
    return d / d.sum(axis=0)


def argmax_surface(g: Grid2) -> SurfaceTrace:
    # np.argmax returns the first maximum, i.e. the smallest row on ties
    return SurfaceTrace(np.argmax(g.data, axis=0).astype(np.float64))


# -- CSV formats --------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_grid_csv(path, g: Grid2 | np.ndarray) -> None:
    data = g.data if isinstance(g, Grid2) else np.asarray(g, dtype=np.float64)
    lines = [",".join(_fmt(v) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path, kind: Kind = Kind.IMAGE) -> Grid2:
    rows = _read_rows(path)
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise InputError(f"{path}: ragged rows")
    return Grid2(np.array(rows, dtype=np.float64), kind)


def write_lines_csv(path, lines) -> None:
    text = "\n".join(",".join(_fmt(v) for v in np.ravel(line)) for line in lines)
    Path(path).write_text(text + "\n")


def read_lines_csv(path) -> list[np.ndarray]:
    return [np.array(r, dtype=np.float64) for r in _read_rows(path)]


def write_trace_csv(path, trace: SurfaceTrace | np.ndarray) -> None:
    x = trace.x if isinstance(trace, SurfaceTrace) else trace
    write_lines_csv(path, [x])


def read_trace_csv(path) -> SurfaceTrace:
    lines = read_lines_csv(path)
    if len(lines) != 1:
        raise InputError(f"{path}: expected one line, found {len(lines)}")
    return SurfaceTrace(lines[0])


def _read_rows(path) -> list[list[float]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return [[float(v) for v in line.split(",")] for line in text.splitlines() if line.strip()]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
