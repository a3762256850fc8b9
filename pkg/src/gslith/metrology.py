"""Profilometer circle fits and resonator power-shift detection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares

from .errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidGeometryError,
    InvalidParameterError,
    NoResonanceError,
    ParseError,
)
from .grids import Grid, format_float

__all__ = [
    "ProfileTrace",
    "ProfileFit",
    "kasa_fit",
    "fit_circle_points",
    "circle_fit",
    "LineCut",
    "sample_cut",
    "profile_error",
    "TransmissionTrace",
    "ResonanceFit",
    "ShiftResult",
    "lorentzian_dip",
    "fit_resonance",
    "default_threshold",
    "power_shift",
    "load_profile_trace",
    "save_profile_trace",
    "load_transmission",
    "save_transmission",
]


@dataclass(frozen=True, eq=False)
class ProfileTrace:
    x: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if x.ndim != 1 or x.shape != h.shape:
            raise InvalidParameterError("trace x and h must be 1D arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise InvalidParameterError("trace x must be strictly increasing")
        if np.any(h < 0):
            raise InvalidParameterError("trace heights must be >= 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", h)

    def __len__(self):
        return self.x.size


@dataclass(frozen=True)
class ProfileFit:
    a: float
    b: float
    radius: float
    rms_residual: float
    iterations: int = 0

    @property
    def center(self) -> tuple[float, float]:
        return (self.a, self.b)

    def upper_branch(self, x):
        """h(x) = b + sqrt(R^2 - (x - a)^2), NaN outside the circle."""
        x = np.asarray(x, dtype=float)
        q = self.radius ** 2 - (x - self.a) ** 2
        with np.errstate(invalid="ignore"):
            return np.where(q >= 0, self.b + np.sqrt(q), np.nan)


def _check_points(x, y):
    n = x.size
    if n < 5:
        raise InsufficientDataError(f"circle fit needs at least 5 samples, got {n}")
    pts = np.column_stack([x - x.mean(), y - y.mean()])
    # rms orthogonal distance to the best-fit line
    s = np.linalg.svd(pts, compute_uv=False)
    if s[-1] / math.sqrt(n) <= 1e-9:
        raise DegenerateGeometryError("samples are collinear; no circle fits them")


def _rms(x, y, a, b, r):
    d = np.hypot(x - a, y - b)
    return float(np.sqrt(np.mean((d - r) ** 2)))


def kasa_fit(x, y):
    """Algebraic circle fit minimizing sum (x^2 + y^2 + A x + B y + C)^2.

    Returns ``(a, b, R)``. Coordinates are centered first for conditioning.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mx, my = x.mean(), y.mean()
    u, v = x - mx, y - my
    m = np.column_stack([u, v, np.ones_like(u)])
    (A, B, C), *_ = np.linalg.lstsq(m, -(u * u + v * v), rcond=None)
    a, b = -A / 2, -B / 2
    r = math.sqrt(max(a * a + b * b - C, 0.0))
    return a + mx, b + my, r


def fit_circle_points(x, y, max_iter: int = 50, step_tol: float = 1e-10) -> ProfileFit:
    """Least-squares circle through arbitrary 2D points.

    An algebraic (Kasa) seed is refined by Gauss-Newton on the orthogonal
    distances. Steps that would raise the residual are halved, so the result
    is never worse than the seed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_points(x, y)
    mx, my = x.mean(), y.mean()
    u, v = x - mx, y - my
    a, b, r = kasa_fit(u, v)
    best = seed_rms = _rms(u, v, a, b, r)
    seed = (a, b, r)
    it = 0
    for it in range(1, max_iter + 1):
        dx, dy = u - a, v - b
        d = np.hypot(dx, dy)
        d = np.where(d == 0, np.finfo(float).tiny, d)
        res = d - r
        jac = np.column_stack([-dx / d, -dy / d, -np.ones_like(d)])
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        t = 1.0
        while t > 1e-6:
            na, nb, nr = a + t * step[0], b + t * step[1], r + t * step[2]
            cand = _rms(u, v, na, nb, nr)
            # slack of a few ulps: in flat valleys the rms stops resolving the step
            if cand <= best * (1 + 1e-13):
                break
            t *= 0.5
        else:
            break
        a, b, r, best = na, nb, nr, cand
        if t * np.linalg.norm(step) <= step_tol * max(1.0, abs(r)):
            break
    if best > seed_rms:
        (a, b, r), best = seed, seed_rms
    return ProfileFit(float(a + mx), float(b + my), float(abs(r)), best, it)


def circle_fit(trace: ProfileTrace, max_iter: int = 50, step_tol: float = 1e-10) -> ProfileFit:
    """Circle fit of a profilometer trace, heights on the vertical axis."""
    return fit_circle_points(trace.x, trace.h, max_iter, step_tol)


@dataclass(frozen=True)
class LineCut:
    """Straight cut from ``start`` to ``end`` (um). Trace x is distance from ``start``."""

    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    def points(self, s):
        s = np.asarray(s, dtype=float)
        L = self.length
        if L == 0:
            raise InvalidGeometryError("cut has zero length")
        ux = (self.end[0] - self.start[0]) / L
        uy = (self.end[1] - self.start[1]) / L
        return self.start[0] + s * ux, self.start[1] + s * uy


def _check_cut(grid: Grid, cut: LineCut, s=None):
    xmin, xmax, ymin, ymax = grid.extent
    eps = 1e-9 * grid.pitch
    for px, py in (cut.start, cut.end):
        if not (xmin - eps <= px <= xmax + eps and ymin - eps <= py <= ymax + eps):
            raise InvalidGeometryError(f"cut point ({px}, {py}) lies outside the grid")
    if s is not None and (np.min(s) < -eps or np.max(s) > cut.length + eps):
        raise InvalidGeometryError("trace positions run past the ends of the cut")


def sample_cut(grid: Grid, cut: LineCut, s):
    """Bilinear interpolation of grid values at distances ``s`` along the cut."""
    _check_cut(grid, cut, s)
    px, py = cut.points(s)
    x0, y0 = grid.origin
    col = (px - x0) / grid.pitch - 0.5
    row = grid.nrows - (py - y0) / grid.pitch - 0.5
    return map_coordinates(grid.values, [np.atleast_1d(row), np.atleast_1d(col)],
                           order=1, mode="nearest")


def profile_error(trace: ProfileTrace, target: Grid, cut: LineCut) -> tuple[float, float]:
    """``(max_abs, rms)`` difference between a measured trace and the target along a cut."""
    ref = sample_cut(target, cut, trace.x)
    diff = trace.h - ref
    return float(np.max(np.abs(diff))), float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True, eq=False)
class TransmissionTrace:
    freq_ghz: np.ndarray
    mag_db: np.ndarray
    power_dbm: float | None = None

    def __post_init__(self):
        f = np.asarray(self.freq_ghz, dtype=float)
        m = np.asarray(self.mag_db, dtype=float)
        if f.ndim != 1 or f.shape != m.shape or f.size < 3:
            raise InvalidParameterError("transmission trace needs matching 1D arrays (>= 3 points)")
        if np.any(np.diff(f) <= 0):
            raise InvalidParameterError("frequencies must be strictly increasing")
        object.__setattr__(self, "freq_ghz", f)
        object.__setattr__(self, "mag_db", m)

    @property
    def spacing_ghz(self) -> float:
        return float(np.median(np.diff(self.freq_ghz)))


@dataclass(frozen=True)
class ResonanceFit:
    f0_ghz: float
    kappa_ghz: float
    depth: float
    baseline: float
    degraded: bool = False


def lorentzian_dip(f, f0, kappa, depth, baseline=1.0):
    """Linear power transmission |S|^2 of a symmetric Lorentzian dip."""
    f = np.asarray(f, dtype=float)
    return baseline * (1.0 - depth / (1.0 + 4.0 * ((f - f0) / kappa) ** 2))


def fit_resonance(trace: TransmissionTrace, label: str | None = None) -> ResonanceFit:
    """Locate the dominant transmission dip.

    The dip must reach 3 dB below the trace median. A Lorentzian in linear
    power (with a free baseline level) is fitted within +-5 discrete
    linewidths of the minimum; if that fit fails the discrete minimum is
    returned with ``degraded=True``.
    """
    f, db = trace.freq_ghz, trace.mag_db
    med = float(np.median(db))
    i0 = int(np.argmin(db))
    if db[i0] > med - 3.0:
        raise NoResonanceError(
            f"no dip: minimum {db[i0]:.3g} dB is within 3 dB of the median {med:.3g} dB", label)
    base = 10 ** (med / 10)
    lin = 10 ** (db / 10) / base
    depth0 = 1.0 - lin[i0]
    half = 1.0 - depth0 / 2
    left = i0
    while left > 0 and lin[left - 1] < half:
        left -= 1
    right = i0
    while right < f.size - 1 and lin[right + 1] < half:
        right += 1
    step = trace.spacing_ghz
    kappa0 = max(f[right] - f[left], step)
    fallback = ResonanceFit(float(f[i0]), float(kappa0), float(depth0), base, True)

    win = np.abs(f - f[i0]) <= 5 * kappa0
    if win.sum() < 5:
        win = np.ones_like(f, bool)
    # unitless offsets keep the problem well conditioned
    u = (f[win] - f[i0]) / kappa0
    y = lin[win]

    def resid(p):
        return lorentzian_dip(u, p[0], p[1], p[2], p[3]) - y

    try:
        sol = least_squares(resid, [0.0, 1.0, depth0, 1.0],
                            bounds=([u.min(), 1e-6, 0.0, 0.0], [u.max(), np.inf, 2.0, np.inf]),
                            x_scale=[1.0, 1.0, 0.5, 1.0], xtol=1e-14, ftol=1e-14, gtol=1e-14,
                            max_nfev=2000)
    except (ValueError, np.linalg.LinAlgError):
        return fallback
    u0, k, a, b = sol.x
    if not (sol.success and np.all(np.isfinite(sol.x)) and k > 0 and a > 0):
        return fallback
    if abs(u0) > 5.0:
        return fallback
    return ResonanceFit(float(f[i0] + u0 * kappa0), float(k * kappa0), float(a),
                        float(b * base), False)


@dataclass(frozen=True)
class ShiftResult:
    f_low: float
    f_high: float
    shift_mhz: float
    operable: bool
    sign: str
    threshold_mhz: float
    degraded: bool = False

    def lines(self) -> list[str]:
        return [
            f"f_low_ghz={self.f_low:.9g}",
            f"f_high_ghz={self.f_high:.9g}",
            f"shift_mhz={self.shift_mhz:.4g}",
            f"operable={'true' if self.operable else 'false'}",
            f"sign={self.sign}",
            f"threshold_mhz={self.threshold_mhz:.4g}",
            "threshold_source=convention",
            f"degraded_fit={'true' if self.degraded else 'false'}",
        ]


def default_threshold(*traces: TransmissionTrace) -> float:
    """max(0.1 MHz, 5 x frequency-grid spacing), in MHz."""
    spacing = max(t.spacing_ghz for t in traces) * 1e3
    return max(0.1, 5 * spacing)


def power_shift(low: TransmissionTrace, high: TransmissionTrace,
                threshold: float | None = None) -> ShiftResult:
    """Resonance shift from low to high incident power, in MHz.

    A transmon counts as operable when the readout resonator moves by at
    least ``threshold`` MHz. The default threshold is an artifact convention,
    not a physical criterion.
    """
    fit_lo = fit_resonance(low, "low-power")
    fit_hi = fit_resonance(high, "high-power")
    if threshold is None:
        threshold = default_threshold(low, high)
    shift = (fit_hi.f0_ghz - fit_lo.f0_ghz) * 1e3
    return ShiftResult(fit_lo.f0_ghz, fit_hi.f0_ghz, shift, abs(shift) >= threshold,
                       "positive" if shift >= 0 else "negative", float(threshold),
                       fit_lo.degraded or fit_hi.degraded)


def _read_csv_rows(path, header):
    path = Path(path)
    comments = []
    rows = []
    seen_header = False
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                comments.append(s[1:].strip())
                continue
            cells = [c.strip() for c in next(csv.reader([s]))]
            if not seen_header:
                if tuple(cells) != header:
                    raise ParseError(f"expected header {','.join(header)}", lineno, path)
                seen_header = True
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} columns", lineno, path)
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise ParseError(f"non-numeric row {s!r}", lineno, path) from None
    if not seen_header:
        raise ParseError(f"missing header {','.join(header)}", None, path)
    return np.array(rows, dtype=float).reshape(-1, len(header)), comments


PROFILE_HEADER = ("x_um", "height_um")
TRANSMISSION_HEADER = ("freq_GHz", "mag_dB")


def load_profile_trace(path) -> ProfileTrace:
    data, _ = _read_csv_rows(path, PROFILE_HEADER)
    try:
        return ProfileTrace(data[:, 0], data[:, 1])
    except InvalidParameterError as exc:
        raise ParseError(str(exc), None, path) from None


def save_profile_trace(trace: ProfileTrace, path) -> None:
    lines = [",".join(PROFILE_HEADER)]
    lines += [f"{format_float(x)},{format_float(h)}" for x, h in zip(trace.x, trace.h)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_transmission(path) -> TransmissionTrace:
    data, comments = _read_csv_rows(path, TRANSMISSION_HEADER)
    power = None
    for c in comments:
        if c.replace(" ", "").startswith("power_dbm="):
            try:
                power = float(c.split("=", 1)[1])
            except ValueError:
                raise ParseError(f"bad power comment {c!r}", None, path) from None
    try:
        return TransmissionTrace(data[:, 0], data[:, 1], power)
    except InvalidParameterError as exc:
        raise ParseError(str(exc), None, path) from None


def save_transmission(trace: TransmissionTrace, path) -> None:
    lines = []
    if trace.power_dbm is not None:
        lines.append(f"# power_dbm={format_float(trace.power_dbm)}")
    lines.append(",".join(TRANSMISSION_HEADER))
    lines += [f"{format_float(f)},{format_float(m)}" for f, m in zip(trace.freq_ghz, trace.mag_db)]
    Path(path).write_text("\n".join(lines) + "\n")
