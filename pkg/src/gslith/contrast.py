"""Dose to remnant-height contrast curve of a positive grayscale resist.

The default curve is shape-free: measured heights are made monotone by
isotonic regression and then interpolated with a monotone cubic (PCHIP) in
log-dose. Below the onset dose the resist keeps its full height, above the
clearing dose it is gone, and in between the curve is strictly decreasing so
it can be inverted by bisection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares

from .errors import (
    BadCalibrationError,
    IncompleteCalibrationError,
    InvalidParameterError,
    ParseError,
)

__all__ = [
    "ContrastSample",
    "ContrastCurve",
    "isotonic_decreasing",
    "fit_contrast",
    "power_law_height",
    "fit_power_law",
    "height_for_dose",
    "dose_for_height",
    "load_calibration",
    "save_calibration",
    "load_contrast",
    "save_contrast",
]

DEFAULT_THICKNESS_UM = 3.0
# fraction of full height within which the extreme isotonic blocks count as anchors
ANCHOR_TOL = 0.05
# max isotonic repair displacement, as a fraction of full height
REPAIR_LIMIT = 0.10


@dataclass(frozen=True)
class ContrastSample:
    dose: float
    height: float

    def __post_init__(self):
        if not (math.isfinite(self.dose) and math.isfinite(self.height)):
            raise InvalidParameterError("contrast samples must be finite")
        if self.dose < 0 or self.height < 0:
            raise InvalidParameterError(
                f"contrast samples must be non-negative, got ({self.dose}, {self.height})")


class ContrastCurve:
    """Monotone contrast curve C(D) defined by (dose, height) knots.

    The first knot is ``(onset_dose, full_height)`` and the last is
    ``(clearing_dose, 0)``; knot heights strictly decrease in between.
    Instances are immutable by convention.
    """

    def __init__(self, doses, heights, full_height: float):
        doses = np.asarray(doses, dtype=float)
        heights = np.asarray(heights, dtype=float)
        if doses.ndim != 1 or doses.shape != heights.shape or doses.size < 2:
            raise InvalidParameterError("contrast knots need at least two (dose, height) pairs")
        if not full_height > 0:
            raise InvalidParameterError(f"full height must be > 0, got {full_height}")
        if doses[0] <= 0:
            raise InvalidParameterError("onset dose must be > 0 for log-dose interpolation")
        if np.any(np.diff(doses) <= 0):
            raise InvalidParameterError("knot doses must be strictly increasing")
        if np.any(np.diff(heights) >= 0):
            raise InvalidParameterError("knot heights must be strictly decreasing")
        if heights[0] != full_height or heights[-1] != 0.0:
            raise InvalidParameterError("knots must run from full height down to zero")
        self.doses = doses
        self.heights = heights
        self.full_height = float(full_height)
        self._logd = np.log(doses)
        self._interp = PchipInterpolator(self._logd, heights, extrapolate=False)
        for arr in (self.doses, self.heights):
            arr.setflags(write=False)

    @property
    def onset_dose(self) -> float:
        return float(self.doses[0])

    @property
    def clearing_dose(self) -> float:
        return float(self.doses[-1])

    def __repr__(self):
        return (f"ContrastCurve(T0={self.full_height:g}, D0={self.onset_dose:g}, "
                f"Dc={self.clearing_dose:g}, knots={self.doses.size})")

    def __eq__(self, other):
        if not isinstance(other, ContrastCurve):
            return NotImplemented
        return (self.full_height == other.full_height
                and np.array_equal(self.doses, other.doses)
                and np.array_equal(self.heights, other.heights))

    __hash__ = None

    def height(self, dose):
        """Remnant height (um) for absorbed dose; vectorized."""
        d = np.asarray(dose, dtype=float)
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise InvalidParameterError("dose must be >= 0")
        out = np.empty_like(d)
        low = d <= self.onset_dose
        high = d >= self.clearing_dose
        mid = ~(low | high)
        out[low] = self.full_height
        out[high] = 0.0
        if np.any(mid):
            h = self._interp(np.log(d[mid]))
            out[mid] = np.clip(h, 0.0, self.full_height)
        if np.ndim(dose) == 0:
            return float(out)
        return out

    def dose(self, height, rtol: float = 1e-12):
        """Inverse of :meth:`height` on the strictly decreasing branch.

        Full height maps to the onset dose and zero to the clearing dose.
        Interior heights are bisected in log-dose until the bracket is
        narrower than ``rtol`` relative.
        """
        h = np.asarray(height, dtype=float)
        t0 = self.full_height
        if np.any(np.isnan(h)) or np.any(h < 0) or np.any(h > t0):
            raise InvalidParameterError(f"height must lie in [0, {t0}]")
        out = np.empty_like(h)
        top = h == t0
        bottom = h == 0
        mid = ~(top | bottom)
        out[top] = self.onset_dose
        out[bottom] = self.clearing_dose
        if np.any(mid):
            target = h[mid]
            lo = np.full(target.shape, self._logd[0])
            hi = np.full(target.shape, self._logd[-1])
            # knots bracket the answer; narrow to the knot interval first
            idx = np.searchsorted(-self.heights, -target, side="left")
            idx = np.clip(idx, 1, self.heights.size - 1)
            lo = self._logd[idx - 1]
            hi = self._logd[idx]
            ltol = math.log1p(rtol)
            for _ in range(200):
                m = 0.5 * (lo + hi)
                above = self._interp(m) > target
                lo = np.where(above, m, lo)
                hi = np.where(above, hi, m)
                if np.all(hi - lo <= ltol):
                    break
            out[mid] = np.exp(0.5 * (lo + hi))
        if np.ndim(height) == 0:
            return float(out)
        return out

    def clamp_energy(self, energy):
        """Project energies onto [onset, clearing] where the curve is invertible."""
        return np.clip(energy, self.onset_dose, self.clearing_dose)

    @classmethod
    def from_power_law(cls, full_height, onset_dose, clearing_dose, gamma=2.0, n_knots=65):
        """Tabulate the parametric log-dose power law as a knot curve."""
        if not 0 < onset_dose < clearing_dose:
            raise InvalidParameterError("need 0 < onset dose < clearing dose")
        d = np.exp(np.linspace(math.log(onset_dose), math.log(clearing_dose), n_knots))
        d[0], d[-1] = onset_dose, clearing_dose
        h = power_law_height(d, full_height, onset_dose, clearing_dose, gamma)
        h[0], h[-1] = full_height, 0.0
        return cls(d, h, full_height)


def height_for_dose(curve: ContrastCurve, dose):
    return curve.height(dose)


def dose_for_height(curve: ContrastCurve, height):
    return curve.dose(height)


def power_law_height(dose, full_height, onset_dose, clearing_dose, gamma):
    """T0 * clamp(1 - (ln(D/D0)/ln(Dc/D0))**gamma, 0, 1)."""
    d = np.asarray(dose, dtype=float)
    u = np.log(np.maximum(d, onset_dose) / onset_dose) / math.log(clearing_dose / onset_dose)
    return full_height * np.clip(1.0 - np.clip(u, 0.0, None) ** gamma, 0.0, 1.0)


def isotonic_decreasing(y, w=None):
    """Pool-adjacent-violators fit of a non-increasing sequence.

    Returns ``(fitted, blocks)`` where ``blocks`` lists ``(start, stop)``
    index ranges that share one fitted value.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, starts = [], [], []
    for i, (yi, wi) in enumerate(zip(y, w)):
        vals.append(yi)
        wts.append(wi)
        starts.append(i)
        while len(vals) > 1 and vals[-2] <= vals[-1]:
            wsum = wts[-2] + wts[-1]
            vals[-2] = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / wsum
            wts[-2] = wsum
            del vals[-1], wts[-1], starts[-1]
    stops = starts[1:] + [len(y)]
    fitted = np.empty_like(y)
    for v, a, b in zip(vals, starts, stops):
        fitted[a:b] = v
    return fitted, list(zip(starts, stops))


def _as_arrays(samples):
    doses = np.array([s.dose if isinstance(s, ContrastSample) else s[0] for s in samples], float)
    heights = np.array([s.height if isinstance(s, ContrastSample) else s[1] for s in samples], float)
    for d, h in zip(doses, heights):
        ContrastSample(d, h)
    return doses, heights


def fit_contrast(samples, full_height: float = DEFAULT_THICKNESS_UM) -> ContrastCurve:
    """Fit a monotone contrast curve to calibration samples.

    ``samples`` are :class:`ContrastSample` or ``(dose, height)`` pairs. Heights
    are clipped to ``[0, full_height]`` and made non-increasing by isotonic
    regression; if that moves any sample by more than 10% of the full height
    the calibration is rejected. The top and bottom pooled blocks become the
    full-height and cleared plateaus; when the data needed clipping or repair,
    neighbouring blocks within 5% of full height of an anchor join it. interior blocks collapse to one knot each at their
    mean log-dose.
    """
    if not full_height > 0:
        raise InvalidParameterError(f"full height must be > 0, got {full_height}")
    doses, heights = _as_arrays(samples)
    if doses.size < 4:
        raise IncompleteCalibrationError(
            f"need at least 4 calibration samples, got {doses.size}")
    order = np.argsort(doses, kind="stable")
    doses, heights = doses[order], heights[order]
    if np.any(np.diff(doses) == 0):
        raise BadCalibrationError("calibration doses must be distinct")

    clipped = np.clip(heights, 0.0, full_height)
    iso, blocks = isotonic_decreasing(clipped)
    repair = float(np.max(np.abs(iso - clipped)))
    if repair > REPAIR_LIMIT * full_height:
        raise BadCalibrationError(
            f"calibration is non-monotone: isotonic repair moved a sample by {repair:.4g} um "
            f"(> {REPAIR_LIMIT:.0%} of full height)")
    if iso[0] < (1 - ANCHOR_TOL) * full_height:
        raise IncompleteCalibrationError("no full-height sample in calibration data")
    if iso[-1] > ANCHOR_TOL * full_height:
        raise IncompleteCalibrationError("no zero-height (cleared) sample in calibration data")
    if len(blocks) < 2:
        raise BadCalibrationError("calibration shows no height change")

    # noisy data: blocks within the anchor tolerance join the plateaus;
    # clean data keeps every sample as a knot
    noisy = max(repair, float(np.max(np.abs(clipped - heights)))) > 1e-12 * full_height
    plateau_tol = ANCHOR_TOL * full_height if noisy else 0.0
    top = 1
    while top < len(blocks) - 1 and iso[blocks[top][0]] >= full_height - plateau_tol:
        top += 1
    bottom = len(blocks) - 1
    while bottom > top and iso[blocks[bottom - 1][0]] <= plateau_tol:
        bottom -= 1
    knot_d = [doses[blocks[top - 1][1] - 1]]
    knot_h = [full_height]
    for a, b in blocks[top:bottom]:
        knot_d.append(float(np.exp(np.mean(np.log(doses[a:b])))))
        knot_h.append(iso[a])
    knot_d.append(doses[blocks[bottom][0]])
    knot_h.append(0.0)
    knot_d = np.array(knot_d)
    knot_h = np.array(knot_h)
    # interior blocks snapped to the anchors would break strict monotonicity
    keep = np.ones(knot_d.size, bool)
    keep[1:-1] = (knot_h[1:-1] < full_height) & (knot_h[1:-1] > 0)
    knot_d, knot_h = knot_d[keep], knot_h[keep]
    if knot_d[0] <= 0:
        raise IncompleteCalibrationError("need a full-height sample at a positive dose")
    return ContrastCurve(knot_d, knot_h, full_height)


def fit_power_law(samples, full_height: float = DEFAULT_THICKNESS_UM):
    """Least-squares fit of the parametric power law.

    Returns ``(curve, params)`` with ``params = (onset, clearing, gamma)``.
    Useful for extrapolating beyond the calibrated dose range.
    """
    doses, heights = _as_arrays(samples)
    if doses.size < 4:
        raise IncompleteCalibrationError(
            f"need at least 4 calibration samples, got {doses.size}")
    pos = doses > 0
    full = heights >= (1 - ANCHOR_TOL) * full_height
    clear = heights <= ANCHOR_TOL * full_height
    if not np.any(full & pos) or not np.any(clear):
        raise IncompleteCalibrationError("calibration needs full-height and cleared samples")
    d0 = float(np.max(doses[full & pos]))
    dc = float(np.min(doses[clear & (doses > d0)])) if np.any(clear & (doses > d0)) else None
    if dc is None:
        raise BadCalibrationError("no cleared sample above the onset dose")

    def resid(p):
        a, b, g = p
        return power_law_height(doses, full_height, math.exp(a), math.exp(a) + math.exp(b), g) - heights

    x0 = [math.log(d0), math.log(dc - d0), 2.0]
    sol = least_squares(resid, x0, bounds=([-np.inf, -np.inf, 0.1], [np.inf, np.inf, 20.0]))
    onset = math.exp(sol.x[0])
    clearing = onset + math.exp(sol.x[1])
    gamma = float(sol.x[2])
    return ContrastCurve.from_power_law(full_height, onset, clearing, gamma), (onset, clearing, gamma)


CALIBRATION_HEADER = ("dose_uC_cm2", "height_um")


def load_calibration(path) -> list[ContrastSample]:
    """Read a calibration CSV with header ``dose_uC_cm2,height_um``."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(c.strip() for c in header) != CALIBRATION_HEADER:
            raise ParseError(f"expected header {','.join(CALIBRATION_HEADER)}", 1, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ParseError("expected two columns", lineno, path)
            try:
                out.append(ContrastSample(float(row[0]), float(row[1])))
            except (ValueError, InvalidParameterError) as exc:
                raise ParseError(f"bad sample {row!r}: {exc}", lineno, path) from None
    return out


def save_calibration(samples, path) -> None:
    doses, heights = _as_arrays(samples)
    lines = [",".join(CALIBRATION_HEADER)]
    lines += [f"{float(d)!r},{float(h)!r}" for d, h in zip(doses, heights)]
    Path(path).write_text("\n".join(lines) + "\n")


CONTRAST_MAGIC = "gslcontrast 1"


def save_contrast(curve: ContrastCurve, path, residual_rms: float | None = None) -> None:
    """Write knots and metadata of a fitted curve (17 significant digits)."""
    lines = [
        CONTRAST_MAGIC,
        f"full_height_um {curve.full_height:.17g}",
        f"onset_dose_uC_cm2 {curve.onset_dose:.17g}",
        f"clearing_dose_uC_cm2 {curve.clearing_dose:.17g}",
    ]
    if residual_rms is not None:
        lines.append(f"residual_rms_um {residual_rms:.17g}")
    lines.append(f"knots {curve.doses.size}")
    lines += [f"{d:.17g} {h:.17g}" for d, h in zip(curve.doses, curve.heights)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_contrast(path, full_height: float | None = None) -> ContrastCurve:
    """Load a contrast model file, or fit one from a calibration CSV.

    A calibration CSV is recognised by its header; ``full_height`` is then
    required (defaults to the 3 um stack).
    """
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    if first.replace(" ", "").startswith(",".join(CALIBRATION_HEADER)):
        return fit_contrast(load_calibration(path),
                            DEFAULT_THICKNESS_UM if full_height is None else full_height)
    if first != CONTRAST_MAGIC:
        raise ParseError(f"expected '{CONTRAST_MAGIC}' or a calibration CSV header", 1, path)
    meta = {}
    doses, heights = [], []
    n_knots = None
    with path.open() as fh:
        lines = fh.read().splitlines()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            if n_knots is None:
                if len(parts) != 2:
                    raise ValueError
                if parts[0] == "knots":
                    n_knots = int(parts[1])
                else:
                    meta[parts[0]] = float(parts[1])
            else:
                d, h = float(parts[0]), float(parts[1])
                if len(parts) != 2:
                    raise ValueError
                doses.append(d)
                heights.append(h)
        except ValueError:
            raise ParseError(f"malformed line {line!r}", lineno, path) from None
    if n_knots is None or len(doses) != n_knots:
        raise ParseError(f"expected {n_knots} knots, found {len(doses)}", None, path)
    if "full_height_um" not in meta:
        raise ParseError("missing full_height_um", None, path)
    try:
        return ContrastCurve(doses, heights, meta["full_height_um"])
    except InvalidParameterError as exc:
        raise ParseError(str(exc), None, path) from None
