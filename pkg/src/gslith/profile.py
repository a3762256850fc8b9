"""Target resist-height maps for grayscale airbridges."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGeometryError, InvalidParameterError, TargetExceedsResistError
from .grids import HeightMap

__all__ = ["BridgeSpec", "arc_radius", "arc_height", "arc_bridge_height_map", "uniform_map",
           "compose", "DEFAULT_BRIDGE"]


@dataclass(frozen=True)
class BridgeSpec:
    """Airbridge geometry in um.

    The bridge axis runs along x. ``span`` is foot-to-foot, ``apex`` the resist
    height at mid-span, ``width`` the transverse deck width and ``margin`` the
    cleared border around the deck footprint.
    """

    span: float = 28.0
    apex: float = 3.0
    width: float = 8.0
    margin: float = 4.0

    def __post_init__(self):
        if not (self.span > 0 and self.width > 0 and self.apex > 0):
            raise InvalidParameterError("span, apex and width must be > 0")
        if not self.margin >= 0:
            raise InvalidParameterError("margin must be >= 0")
        if self.apex > self.span / 2:
            raise InvalidGeometryError(
                f"apex {self.apex} um exceeds half the span; no circular arc through the feet")

    @property
    def radius(self) -> float:
        return arc_radius(self.span, self.apex)


# 28 um span clears a CPW with 12 um center conductor and 4 um gaps, feet on ground
DEFAULT_BRIDGE = BridgeSpec()


def arc_radius(span: float, apex: float) -> float:
    return span * span / (8.0 * apex) + apex / 2.0


def arc_height(x, span: float, apex: float):
    """Height of the circular arc through (+-span/2, 0) and (0, apex), clamped at 0."""
    r = arc_radius(span, apex)
    x = np.asarray(x, dtype=float)
    inside = np.maximum(r * r - x * x, 0.0)
    return np.maximum(apex - r + np.sqrt(inside), 0.0)


def uniform_map(shape, pitch: float, value: float, origin=(0.0, 0.0)) -> HeightMap:
    return HeightMap(np.full(shape, float(value)), pitch, origin)


def arc_bridge_height_map(spec: BridgeSpec, full_height: float, pitch: float,
                          shape: tuple[int, int] | None = None) -> HeightMap:
    """Extruded-arc bridge target centered in the field.

    Inside the deck footprint the longitudinal section follows the arc, the
    clearance border is 0 and the rest of the field keeps ``full_height``.
    Without ``shape`` the field is the footprint plus margin plus one more
    margin (at least 4 cells) of unexposed resist on each side.
    """
    if spec.apex > full_height:
        raise TargetExceedsResistError(
            f"apex {spec.apex} um exceeds resist thickness {full_height} um")
    if not pitch > 0:
        raise InvalidParameterError(f"pitch must be > 0, got {pitch}")
    if pitch > spec.span / 16:
        raise InvalidGeometryError(
            f"pitch {pitch} um leaves fewer than 16 cells across the {spec.span} um span")
    if shape is None:
        border = max(spec.margin, 4 * pitch)
        ncols = 2 * int(math.ceil((spec.span / 2 + spec.margin + border) / pitch))
        nrows = 2 * int(math.ceil((spec.width / 2 + spec.margin + border) / pitch))
        shape = (nrows, ncols)
    nrows, ncols = shape
    if nrows <= 0 or ncols <= 0:
        raise InvalidParameterError("grid shape must be positive")
    half_x = spec.span / 2 + spec.margin
    half_y = spec.width / 2 + spec.margin
    if half_x > ncols * pitch / 2 or half_y > nrows * pitch / 2:
        raise InvalidGeometryError("bridge with clearance does not fit the requested field")

    # cell centers relative to the field center; exact mirror pairs
    xs = (np.arange(ncols) + 0.5 - ncols / 2) * pitch
    ys = (np.arange(nrows) + 0.5 - nrows / 2) * pitch
    ax = np.abs(xs)[None, :]
    ay = np.abs(ys)[:, None]
    values = np.full(shape, float(full_height))
    clear = (ax <= half_x) & (ay <= half_y)
    values[clear] = 0.0
    deck = (ax <= spec.span / 2) & (ay <= spec.width / 2)
    arc = np.broadcast_to(arc_height(xs, spec.span, spec.apex)[None, :], shape)
    values[deck] = arc[deck]
    origin = (-ncols * pitch / 2, -nrows * pitch / 2)
    return HeightMap(values, pitch, origin)


def compose(base: HeightMap, patch: HeightMap, position=(0.0, 0.0)) -> HeightMap:
    """Place ``patch`` with its lower-left corner at ``position`` (um) on ``base``.

    Overlapping cells keep the lower height, since more development wins.
    The offset must land on the base grid.
    """
    base.check_compatible(patch)
    p = base.pitch
    dx = (position[0] - base.origin[0]) / p
    dy = (position[1] - base.origin[1]) / p
    j0, r0 = round(dx), round(dy)
    if abs(dx - j0) > 1e-6 or abs(dy - r0) > 1e-6:
        raise InvalidGeometryError("patch position is not aligned to the base grid")
    # r0 counts rows from the bottom
    i1 = base.nrows - r0
    i0 = i1 - patch.nrows
    j1 = j0 + patch.ncols
    if i0 < 0 or j0 < 0 or i1 > base.nrows or j1 > base.ncols:
        raise InvalidGeometryError("patch extends beyond the base grid")
    out = base.values.copy()
    out[i0:i1, j0:j1] = np.minimum(out[i0:i1, j0:j1], patch.values)
    return HeightMap(out, p, base.origin)
