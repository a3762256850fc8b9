"""Forward exposure model and grayscale proximity-effect correction.

Absorbed energy is the dose map convolved with the discrete PSF, in
dose-equivalent units; remnant height is the contrast curve applied cellwise.
:func:`solve_dose` inverts this chain with a projected, relaxed fixed-point
iteration on the dose::

    d <- clip(d + lam * (P(d * K) - d * K), 0, max_dose)

where ``P`` projects each cell's energy onto the interval that yields its
target height: a single value on the sloped part of the contrast curve,
``[0, D0]`` for full-height cells and ``[Dc, inf)`` for cleared cells.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .contrast import ContrastCurve
from .errors import (
    IncompatibleGridError,
    InfeasibleTargetError,
    InvalidParameterError,
    ParseError,
    TargetExceedsResistError,
)
from .grids import DoseMap, EnergyMap, Grid, HeightMap, format_float
from .kernel import DiscreteKernel

log = logging.getLogger(__name__)

__all__ = [
    "BOUNDARIES",
    "Convolver",
    "SolverReport",
    "DoseLayer",
    "DoseLayers",
    "absorbed_energy",
    "forward_simulate",
    "solve_dose",
    "quantize",
    "dequantize",
    "format_layers",
    "parse_layers",
    "export_layers",
    "import_layers",
    "LAYERS_MAGIC",
]

BOUNDARIES = ("zero-pad", "periodic")
DEFAULT_LEVELS = 256
MAX_DOSE_FACTOR = 5.0


class Convolver:
    """Cached FFT convolution of fields of one shape with one kernel.

    ``zero-pad`` treats everything outside the field as unexposed;
    ``periodic`` wraps the kernel around the field. ``workers`` is passed to
    :mod:`scipy.fft`; transforms are bit-identical for a fixed worker count.
    """

    def __init__(self, kernel: DiscreteKernel, shape, boundary: str = "zero-pad",
                 workers: int | None = None):
        if boundary not in BOUNDARIES:
            raise InvalidParameterError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
        self.shape = tuple(shape)
        self.boundary = boundary
        self.workers = workers
        h = kernel.half_width
        w = kernel.weights
        if boundary == "zero-pad":
            self.fft_shape = tuple(sfft.next_fast_len(n + h, real=True) for n in self.shape)
        else:
            self.fft_shape = self.shape
        # kernel center moved to index (0, 0), negative offsets wrapped
        wrapped = np.zeros(self.fft_shape)
        offs = np.arange(-h, h + 1)
        rows = np.mod(offs, self.fft_shape[0])
        cols = np.mod(offs, self.fft_shape[1])
        np.add.at(wrapped, (rows[:, None], cols[None, :]), w)
        self._kf = sfft.rfft2(wrapped, workers=workers)

    def __call__(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape != self.shape:
            raise IncompatibleGridError(f"field shape {field.shape} != {self.shape}")
        f = sfft.rfft2(field, s=self.fft_shape, workers=self.workers)
        out = sfft.irfft2(f * self._kf, s=self.fft_shape, workers=self.workers)
        return out[: self.shape[0], : self.shape[1]]


def _check_pitch(grid: Grid, kernel: DiscreteKernel):
    if not math.isclose(grid.pitch, kernel.pitch, rel_tol=1e-12):
        raise IncompatibleGridError(
            f"kernel pitch {kernel.pitch} um does not match grid pitch {grid.pitch} um")


def absorbed_energy(dose: DoseMap, kernel: DiscreteKernel, boundary: str = "zero-pad",
                    workers: int | None = None) -> EnergyMap:
    _check_pitch(dose, kernel)
    energy = Convolver(kernel, dose.shape, boundary, workers)(dose.values)
    return EnergyMap(np.maximum(energy, 0.0), dose.pitch, dose.origin)


def forward_simulate(dose: DoseMap, kernel: DiscreteKernel, curve: ContrastCurve,
                     boundary: str = "zero-pad", workers: int | None = None) -> HeightMap:
    """Remnant height after exposing ``dose`` and developing."""
    energy = absorbed_energy(dose, kernel, boundary, workers)
    return HeightMap(curve.height(energy.values), dose.pitch, dose.origin)


@dataclass
class SolverReport:
    iterations: int
    max_error: float
    converged: bool
    error_trace: list[float] = field(default_factory=list)
    tol: float = 0.0
    boundary: str = "zero-pad"
    guard_band_um: float = 0.0
    interior_max_error: float | None = None

    def lines(self) -> list[str]:
        out = [
            f"converged={'true' if self.converged else 'false'}",
            f"iterations={self.iterations}",
            f"max_error_um={self.max_error:.9g}",
            f"tol_um={self.tol:.9g}",
            f"boundary={self.boundary}",
            f"guard_band_um={self.guard_band_um:.9g}",
            "interior_max_error_um="
            + ("none" if self.interior_max_error is None else f"{self.interior_max_error:.9g}"),
        ]
        out += [f"trace[{k}]={e:.9g}" for k, e in enumerate(self.error_trace)]
        return out


def _energy_bounds(target: np.ndarray, curve: ContrastCurve):
    t0 = curve.full_height
    full = target >= t0
    cleared = target <= 0
    mid = ~(full | cleared)
    lo = np.empty_like(target)
    hi = np.empty_like(target)
    lo[full], hi[full] = 0.0, curve.onset_dose
    lo[cleared], hi[cleared] = curve.clearing_dose, np.inf
    if np.any(mid):
        e = curve.dose(target[mid])
        lo[mid] = e
        hi[mid] = e
    return lo, hi, full, cleared


def _interior_mask(shape, pitch, guard_um):
    g = int(math.ceil(guard_um / pitch - 1e-9))
    mask = np.zeros(shape, bool)
    if 2 * g < shape[0] and 2 * g < shape[1]:
        mask[g: shape[0] - g, g: shape[1] - g] = True
    return mask


def solve_dose(target: HeightMap, kernel: DiscreteKernel, curve: ContrastCurve,
               tol: float | None = None, max_iter: int = 200, relaxation: float = 1.0,
               max_dose: float | None = None, boundary: str = "zero-pad",
               workers: int | None = None) -> tuple[DoseMap, SolverReport]:
    """Dose map whose simulated development reproduces ``target``.

    Convergence is judged in height: every cell within ``tol`` um of its
    target (default 1% of the resist thickness). Hitting ``max_iter`` above
    tolerance returns a report with ``converged=False``. If the remaining
    misses sit on cells pinned at zero dose or ``max_dose`` while still
    asking to move past the bound, no dose map can fix them and
    :class:`InfeasibleTargetError` is raised with those cells flagged.

    With ``boundary="zero-pad"`` the report declares a guard band one kernel
    radius wide along the field edge; ``interior_max_error`` covers the rest.
    """
    _check_pitch(target, kernel)
    t0 = curve.full_height
    h = target.values
    if np.any(h > t0 * (1 + 1e-12)):
        raise TargetExceedsResistError(
            f"target height {h.max():.6g} um exceeds resist thickness {t0} um")
    h = np.minimum(h, t0)
    if tol is None:
        tol = 0.01 * t0
    if not tol > 0:
        raise InvalidParameterError(f"tol must be > 0, got {tol}")
    if not 0 < relaxation <= 2:
        raise InvalidParameterError(f"relaxation must be in (0, 2], got {relaxation}")
    if max_iter < 0:
        raise InvalidParameterError("max_iter must be >= 0")
    if max_dose is None:
        max_dose = MAX_DOSE_FACTOR * curve.clearing_dose
    if not max_dose >= curve.clearing_dose:
        raise InvalidParameterError("max_dose must be at least the clearing dose")

    conv = Convolver(kernel, h.shape, boundary, workers)
    lo, hi, full, cleared = _energy_bounds(h, curve)
    dose = np.where(full, 0.0, lo)
    dose = np.clip(dose, 0.0, max_dose)

    trace = []
    converged = False
    it = 0
    while True:
        energy = np.maximum(conv(dose), 0.0)
        err_map = np.abs(curve.height(energy) - h)
        err = float(err_map.max())
        trace.append(err)
        if err <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        resid = np.clip(energy, lo, hi) - energy
        dose = np.clip(dose + relaxation * resid, 0.0, max_dose)
        it += 1
    log.debug("solve_dose: %d iterations, max error %.3g um", it, err)

    guard = kernel.radius if boundary == "zero-pad" else 0.0
    interior = _interior_mask(h.shape, target.pitch, guard)
    report = SolverReport(
        iterations=it, max_error=err, converged=converged, error_trace=trace, tol=float(tol),
        boundary=boundary, guard_band_um=guard,
        interior_max_error=float(err_map[interior].max()) if interior.any() else None)
    result = DoseMap(dose, target.pitch, target.origin, max_dose)
    if not converged:
        resid = np.clip(energy, lo, hi) - energy
        missing = err_map > tol
        blocked = missing & (((dose <= 0) & (resid < 0)) | ((dose >= max_dose) & (resid > 0)))
        if blocked.any():
            raise InfeasibleTargetError(
                f"infeasible target: {int(blocked.sum())} cells cannot reach their target: dose pinned at a bound "
                f"(max height error {err:.4g} um)", worst_cells=blocked, dose=result,
                report=report)
    return result, report


@dataclass(frozen=True)
class DoseLayer:
    dose: float
    rects: tuple[tuple[float, float, float, float], ...]


@dataclass(frozen=True)
class DoseLayers:
    """Dose classes with their rectangles ``(x0, y0, x1, y1)`` in um."""

    layers: tuple[DoseLayer, ...] = ()

    def __post_init__(self):
        doses = [layer.dose for layer in self.layers]
        if any(b <= a for a, b in zip(doses, doses[1:])):
            raise InvalidParameterError("dose levels must be strictly increasing")
        for layer in self.layers:
            for x0, y0, x1, y1 in layer.rects:
                if not (x1 > x0 and y1 > y0):
                    raise InvalidParameterError(f"degenerate rectangle {(x0, y0, x1, y1)}")

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def n_rects(self) -> int:
        return sum(len(layer.rects) for layer in self.layers)


def _runs_to_rects(index: np.ndarray, n_levels: int):
    """Row run-length encode a level-index map and merge identical runs vertically.

    Returns ``{level: [(i0, i1, j0, j1), ...]}`` in cell indices (half-open).
    """
    nrows, ncols = index.shape
    rects = {}
    open_runs = {}
    for i in range(nrows):
        row = index[i]
        edges = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate(([0], edges))
        stops = np.concatenate((edges, [ncols]))
        current = {}
        for j0, j1 in zip(starts.tolist(), stops.tolist()):
            k = int(row[j0])
            if k < 0:
                continue
            key = (k, j0, j1)
            current[key] = open_runs.pop(key, i)
        for (k, j0, j1), i0 in open_runs.items():
            rects.setdefault(k, []).append((i0, i, j0, j1))
        open_runs = current
    for (k, j0, j1), i0 in open_runs.items():
        rects.setdefault(k, []).append((i0, nrows, j0, j1))
    return rects


def quantize(dose: DoseMap, n_levels: int = DEFAULT_LEVELS) -> DoseLayers:
    """Snap nonzero doses to ``n_levels`` uniform classes and fracture into rectangles.

    Classes span the smallest to largest nonzero dose. Only classes that are
    used appear in the result. An all-zero map gives no layers.
    """
    if n_levels < 2:
        raise InvalidParameterError(f"n_levels must be >= 2, got {n_levels}")
    d = dose.values
    nz = d > 0
    if not nz.any():
        return DoseLayers(())
    lo, hi = float(d[nz].min()), float(d[nz].max())
    if hi == lo:
        levels = np.array([lo])
        index = np.where(nz, 0, -1)
    else:
        levels = np.linspace(lo, hi, n_levels)
        step = (hi - lo) / (n_levels - 1)
        index = np.where(nz, np.clip(np.rint((d - lo) / step), 0, n_levels - 1), -1).astype(int)
    runs = _runs_to_rects(index, len(levels))
    p = dose.pitch
    x0, y0 = dose.origin
    nrows = dose.nrows
    out = []
    for k in sorted(runs):
        rects = []
        for i0, i1, j0, j1 in sorted(runs[k]):
            rects.append((x0 + j0 * p, y0 + (nrows - i1) * p, x0 + j1 * p, y0 + (nrows - i0) * p))
        out.append(DoseLayer(float(levels[k]), tuple(rects)))
    return DoseLayers(tuple(out))


def dequantize(layers: DoseLayers, like: Grid, max_dose: float = np.inf) -> DoseMap:
    """Rasterize dose layers back onto the grid of ``like``."""
    p = like.pitch
    x0, y0 = like.origin
    nrows, ncols = like.shape
    out = np.zeros(like.shape)
    for layer in layers:
        for rx0, ry0, rx1, ry1 in layer.rects:
            j0 = int(round((rx0 - x0) / p))
            j1 = int(round((rx1 - x0) / p))
            i0 = nrows - int(round((ry1 - y0) / p))
            i1 = nrows - int(round((ry0 - y0) / p))
            if i0 < 0 or j0 < 0 or i1 > nrows or j1 > ncols:
                raise IncompatibleGridError("rectangle outside the grid")
            out[i0:i1, j0:j1] = layer.dose
    return DoseMap(out, p, like.origin, max(max_dose, float(out.max())))


LAYERS_MAGIC = "gsllayers 1"


def format_layers(layers: DoseLayers) -> str:
    lines = [LAYERS_MAGIC]
    for layer in layers:
        lines.append(f"level {format_float(layer.dose)} {len(layer.rects)}")
        lines += [" ".join(map(format_float, r)) for r in layer.rects]
    return "\n".join(lines) + "\n"


def parse_layers(text: str, path=None) -> DoseLayers:
    lines = text.splitlines()
    if not lines or lines[0].strip() != LAYERS_MAGIC:
        raise ParseError(f"expected '{LAYERS_MAGIC}'", 1, path)
    layers = []
    n = 1
    while n < len(lines):
        lineno = n + 1
        parts = lines[n].split()
        n += 1
        if not parts:
            continue
        if parts[0] != "level" or len(parts) != 3:
            raise ParseError("expected 'level <dose> <count>'", lineno, path)
        try:
            level, count = float(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError("bad level header", lineno, path) from None
        if count < 0:
            raise ParseError("negative rectangle count", lineno, path)
        if layers and level <= layers[-1].dose:
            raise ParseError("dose levels must be strictly increasing", lineno, path)
        rects = []
        for _ in range(count):
            if n >= len(lines):
                raise ParseError(f"expected {count} rectangles for level {parts[1]}",
                                 n + 1, path)
            rp = lines[n].split()
            n += 1
            try:
                if len(rp) != 4:
                    raise ValueError
                rx0, ry0, rx1, ry1 = (float(v) for v in rp)
            except ValueError:
                raise ParseError("expected 'x0_um y0_um x1_um y1_um'", n, path) from None
            if not (rx1 > rx0 and ry1 > ry0):
                raise ParseError("degenerate rectangle", n, path)
            rects.append((rx0, ry0, rx1, ry1))
        layers.append(DoseLayer(level, tuple(rects)))
    return DoseLayers(tuple(layers))


def export_layers(layers: DoseLayers, path) -> None:
    Path(path).write_text(format_layers(layers))


def import_layers(path) -> DoseLayers:
    path = Path(path)
    return parse_layers(path.read_text(), path)
