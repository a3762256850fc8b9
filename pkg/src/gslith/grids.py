"""Uniform 2D grids (height, dose, energy) and the ``gslgrid`` text format.

Row 0 of ``values`` is the top row of the field. Cell ``(i, j)`` has its
center at ``x = x0 + (j + 0.5) * pitch`` and
``y = y0 + (nrows - i - 0.5) * pitch`` where ``(x0, y0)`` is the lower-left
corner of the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompatibleGridError, InvalidParameterError, ParseError


def format_float(v) -> str:
    """Shortest decimal text that parses back to the same double."""
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text

__all__ = ["Grid", "HeightMap", "DoseMap", "EnergyMap", "write_grid", "read_grid",
           "format_grid", "GRID_MAGIC"]

GRID_MAGIC = "gslgrid 1"
UNITS = {"height": "um", "dose": "uC/cm2", "energy": "uC/cm2"}


@dataclass(eq=False)
class Grid:
    values: np.ndarray
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)
    quantity = "height"

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2 or 0 in self.values.shape:
            raise InvalidParameterError("grid values must be a non-empty 2D array")
        if not self.pitch > 0:
            raise InvalidParameterError(f"pitch must be > 0, got {self.pitch}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("grid values must be finite")
        self.pitch = float(self.pitch)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)`` in um."""
        x0, y0 = self.origin
        return (x0, x0 + self.ncols * self.pitch, y0, y0 + self.nrows * self.pitch)

    def cell_centers(self):
        """1D arrays of column x-centers and row y-centers (row 0 on top)."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.ncols) + 0.5) * self.pitch
        ys = y0 + (self.nrows - np.arange(self.nrows) - 0.5) * self.pitch
        return xs, ys

    def check_compatible(self, other: "Grid") -> None:
        if self.pitch != other.pitch:
            raise IncompatibleGridError(f"pitch mismatch: {self.pitch} vs {other.pitch}")

    def with_values(self, values):
        return type(self)(values, self.pitch, self.origin)


@dataclass(eq=False)
class HeightMap(Grid):
    quantity = "height"

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise InvalidParameterError("heights must be >= 0")


@dataclass(eq=False)
class DoseMap(Grid):
    max_dose: float = np.inf
    quantity = "dose"

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise InvalidParameterError("doses must be >= 0")
        if np.any(self.values > self.max_dose):
            raise InvalidParameterError(f"doses exceed max_dose {self.max_dose}")

    def with_values(self, values):
        return DoseMap(values, self.pitch, self.origin, self.max_dose)


@dataclass(eq=False)
class EnergyMap(Grid):
    quantity = "energy"


_BY_QUANTITY = {"height": HeightMap, "dose": DoseMap, "energy": EnergyMap}


def format_grid(grid: Grid) -> str:
    lines = [GRID_MAGIC,
             f"{grid.ncols} {grid.nrows} {grid.pitch!r} {grid.quantity} {UNITS[grid.quantity]}"]
    for row in grid.values:
        lines.append(" ".join(map(format_float, row)))
    return "\n".join(lines) + "\n"


def write_grid(grid: Grid, path) -> None:
    Path(path).write_text(format_grid(grid))


def read_grid(path) -> Grid:
    """Parse a ``gslgrid 1`` file into the grid class named by its quantity."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != GRID_MAGIC:
        raise ParseError(f"expected '{GRID_MAGIC}'", 1, path)
    if len(lines) < 2:
        raise ParseError("missing grid header", 2, path)
    head = lines[1].split()
    if len(head) != 5:
        raise ParseError("expected 'ncols nrows pitch_um quantity unit'", 2, path)
    try:
        ncols, nrows, pitch = int(head[0]), int(head[1]), float(head[2])
    except ValueError:
        raise ParseError("bad grid header numbers", 2, path) from None
    quantity, unit = head[3], head[4]
    if quantity not in _BY_QUANTITY:
        raise ParseError(f"unknown quantity {quantity!r}", 2, path)
    if unit != UNITS[quantity]:
        raise ParseError(f"unit {unit!r} does not match quantity {quantity}", 2, path)
    if ncols <= 0 or nrows <= 0 or not pitch > 0:
        raise ParseError("grid dimensions and pitch must be positive", 2, path)
    body = [ln for ln in lines[2:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != nrows:
        raise ParseError(f"expected {nrows} rows, found {len(body)}", None, path)
    values = np.empty((nrows, ncols))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, found {len(parts)}", i + 3, path)
        try:
            values[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric grid value", i + 3, path) from None
    try:
        return _BY_QUANTITY[quantity](values, pitch)
    except InvalidParameterError as exc:
        raise ParseError(str(exc), None, path) from None
