"""Junction-resistance distributions and the Bayesian operability posterior.

Densities are Gaussian-kernel estimates whose CDF is the analytic sum of
kernel CDFs, so the PDF is its exact derivative rather than a numerical one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np
from scipy.special import ndtr

from .errors import (
    DegenerateDataError,
    InsufficientDataError,
    InvalidParameterError,
    OutOfSupportError,
    ParseError,
)

__all__ = [
    "LABELS",
    "LabeledSamples",
    "Ecdf",
    "DensityEstimate",
    "PosteriorCurve",
    "YieldRow",
    "ecdf",
    "silverman_bandwidth",
    "kde",
    "bayes_posterior",
    "posterior_operable",
    "posterior_curve",
    "posterior_crossing",
    "empirical_prior",
    "wilson_interval",
    "yield_summary",
    "format_yield_table",
    "format_yield_csv",
    "load_samples",
    "save_samples",
]

LABELS = ("operable", "non-operable", "pre-test", "post-150C", "post-200C", "unlabeled")
UNDERFLOW = 1e-12
# grid margin in bandwidths; 6 keeps the tail mass outside below 1e-9
GRID_MARGIN = 6.0
MIN_GRID_POINTS = 512
# grid spacing in bandwidths; trapezoid error peaks near 0.02 (h/b)^2, so this keeps
# running trapezoid sums of the pdf within 1e-6 of the analytic cdf
GRID_SPACING = 1 / 160
# kernel tails beyond 10 bandwidths (below 1e-23) are dropped
_CUTOFF = 10.0


@dataclass(frozen=True, eq=False)
class LabeledSamples:
    values: np.ndarray
    label: str = "unlabeled"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InvalidParameterError("resistances must be finite and > 0")
        if self.label not in LABELS:
            raise InvalidParameterError(f"unknown label {self.label!r}; expected one of {LABELS}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class Ecdf:
    """Right-continuous empirical CDF with jumps at the distinct sample values."""

    x: np.ndarray
    cdf: np.ndarray
    n: int

    def __call__(self, t):
        idx = np.searchsorted(self.x, np.asarray(t, dtype=float), side="right")
        out = np.where(idx == 0, 0.0, self.cdf[np.maximum(idx - 1, 0)])
        return float(out) if np.ndim(t) == 0 else out


def ecdf(samples) -> Ecdf:
    v = samples.values if isinstance(samples, LabeledSamples) else np.asarray(samples, float)
    if v.size == 0:
        raise InsufficientDataError("ECDF needs at least one sample")
    xs, counts = np.unique(v, return_counts=True)
    cdf = np.cumsum(counts) / v.size
    cdf[-1] = 1.0
    return Ecdf(xs, cdf, int(v.size))


def silverman_bandwidth(values) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5); falls back to whichever spread is nonzero."""
    v = np.asarray(values, dtype=float)
    sd = float(np.std(v, ddof=1))
    q75, q25 = np.percentile(v, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * v.size ** (-0.2)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    samples: np.ndarray
    bandwidth: float
    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    label: str = "unlabeled"

    def _kernel_sum(self, r, fn, below):
        # samples are sorted, so each chunk of points only sees a window of them
        r = np.asarray(r, dtype=float)
        flat = r.ravel()
        order = np.argsort(flat, kind="stable")
        out = np.empty(flat.size)
        cut = _CUTOFF * self.bandwidth
        n = self.samples.size
        step = 256
        for k in range(0, flat.size, step):
            idx = order[k:k + step]
            pts = flat[idx]
            i0 = np.searchsorted(self.samples, pts[0] - cut, side="left")
            i1 = np.searchsorted(self.samples, pts[-1] + cut, side="right")
            z = (pts[:, None] - self.samples[i0:i1]) / self.bandwidth
            out[idx] = (fn(z).sum(axis=1) + below * i0) / n
        return out.reshape(r.shape)

    def pdf_at(self, r):
        norm = self.bandwidth * math.sqrt(2 * math.pi)
        return self._kernel_sum(r, lambda z: np.exp(-0.5 * z * z), 0.0) / norm

    def cdf_at(self, r):
        return self._kernel_sum(r, ndtr, 1.0)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])


def kde(samples, bandwidth: float | None = None, n_points: int = MIN_GRID_POINTS,
        grid=None) -> DensityEstimate:
    """Gaussian KDE with analytic CDF.

    ``bandwidth`` defaults to Silverman's rule. The evaluation grid spans six
    bandwidths beyond the data on each side, with enough points that the
    spacing stays below 1/160 of a bandwidth.
    """
    label = samples.label if isinstance(samples, LabeledSamples) else "unlabeled"
    v = samples.values if isinstance(samples, LabeledSamples) else np.asarray(samples, float)
    if v.size < 3:
        raise InsufficientDataError(f"KDE needs at least 3 samples, got {v.size}")
    if bandwidth is None:
        if np.ptp(v) == 0:
            raise DegenerateDataError("samples have zero variance; pass an explicit bandwidth")
        bandwidth = silverman_bandwidth(v)
    if not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be > 0, got {bandwidth}")
    if grid is None:
        lo = v.min() - GRID_MARGIN * bandwidth
        hi = v.max() + GRID_MARGIN * bandwidth
        n = max(n_points, MIN_GRID_POINTS, int(math.ceil((hi - lo) / (GRID_SPACING * bandwidth))) + 1)
        grid = np.linspace(lo, hi, n)
    grid = np.asarray(grid, dtype=float)
    est = DensityEstimate(np.sort(v), float(bandwidth), grid, np.empty(0), np.empty(0), label)
    pdf = est.pdf_at(grid)
    cdf = est.cdf_at(grid)
    return DensityEstimate(est.samples, est.bandwidth, grid, pdf, cdf, label)


def bayes_posterior(p_op, p_non, prior: float):
    """pi p_op / (pi p_op + (1 - pi) p_non), with NaN where both terms vanish."""
    p_op = np.asarray(p_op, dtype=float)
    p_non = np.asarray(p_non, dtype=float)
    num = prior * p_op
    den = num + (1.0 - prior) * p_non
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _check_prior(prior):
    if not 0 < prior < 1:
        raise InvalidParameterError(f"prior must be in (0, 1), got {prior}")


def posterior_operable(pdf_op: DensityEstimate, pdf_non: DensityEstimate, prior: float, r,
                       return_flag: bool = False):
    """Posterior probability of operability at resistance ``r`` (kOhm).

    Where both class densities fall below 1e-12 the prior is returned and the
    extrapolation flag is set. ``r`` outside both evaluation grids raises
    :class:`OutOfSupportError`.
    """
    _check_prior(prior)
    r_arr = np.asarray(r, dtype=float)
    lo = min(pdf_op.grid[0], pdf_non.grid[0])
    hi = max(pdf_op.grid[-1], pdf_non.grid[-1])
    if np.any(r_arr < lo) or np.any(r_arr > hi):
        raise OutOfSupportError(f"resistance outside the estimated support [{lo:.4g}, {hi:.4g}]")
    p1 = pdf_op.pdf_at(r_arr)
    p0 = pdf_non.pdf_at(r_arr)
    flag = (p1 < UNDERFLOW) & (p0 < UNDERFLOW)
    post = bayes_posterior(p1, p0, prior)
    post = np.where(flag, prior, post)
    if np.ndim(r) == 0:
        post, flag = float(post), bool(flag)
    return (post, flag) if return_flag else post


@dataclass(frozen=True, eq=False)
class PosteriorCurve:
    grid: np.ndarray
    values: np.ndarray
    prior: float
    extrapolated: np.ndarray


def posterior_curve(pdf_op: DensityEstimate, pdf_non: DensityEstimate, prior: float,
                    grid=None) -> PosteriorCurve:
    if grid is None:
        lo = min(pdf_op.grid[0], pdf_non.grid[0])
        hi = max(pdf_op.grid[-1], pdf_non.grid[-1])
        grid = np.linspace(lo, hi, max(pdf_op.grid.size, pdf_non.grid.size))
    grid = np.asarray(grid, dtype=float)
    post, flag = posterior_operable(pdf_op, pdf_non, prior, grid, return_flag=True)
    return PosteriorCurve(grid, post, float(prior), flag)


def posterior_crossing(curve: PosteriorCurve, level: float = 0.5) -> float | None:
    """First resistance where the posterior drops through ``level`` (linear interpolation)."""
    v = np.where(curve.extrapolated, np.nan, curve.values)
    for k in range(v.size - 1):
        a, b = v[k], v[k + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if a >= level > b:
            t = (a - level) / (a - b)
            return float(curve.grid[k] + t * (curve.grid[k + 1] - curve.grid[k]))
    return None


def empirical_prior(n_operable: int, n_non: int) -> float:
    return n_operable / (n_operable + n_non)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class YieldRow:
    label: str
    n_operable: int
    n_total: int
    fraction: float
    ci_low: float
    ci_high: float


def yield_summary(groups, confidence: float = 0.95) -> list[YieldRow]:
    """Operable fraction and Wilson interval per ``(label, n_operable, n_total)`` group."""
    rows = []
    for label, k, n in groups:
        if int(k) != k or int(n) != n:
            raise InvalidParameterError("counts must be integers")
        k, n = int(k), int(n)
        if n < 1 or not 0 <= k <= n:
            raise InvalidParameterError(f"inconsistent counts for {label}: {k} of {n}")
        lo, hi = wilson_interval(k, n, confidence)
        rows.append(YieldRow(str(label), k, n, k / n, lo, hi))
    return rows


def format_yield_table(rows) -> str:
    head = ("group", "operable", "total", "fraction", "ci95_low", "ci95_high")
    body = [(r.label, str(r.n_operable), str(r.n_total), f"{r.fraction:.3f}",
             f"{r.ci_low:.3f}", f"{r.ci_high:.3f}") for r in rows]
    widths = [max(len(c) for c in col) for col in zip(head, *body)]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                       for i, (c, w) in enumerate(zip(line, widths)))
             for line in (head, *body)]
    return "\n".join(lines) + "\n"


def format_yield_csv(rows) -> str:
    lines = ["group,operable,total,fraction,ci95_low,ci95_high"]
    lines += [f"{r.label},{r.n_operable},{r.n_total},{r.fraction:.9g},{r.ci_low:.9g},"
              f"{r.ci_high:.9g}" for r in rows]
    return "\n".join(lines) + "\n"


SAMPLES_HEADER = ("resistance_kohm", "label")


def load_samples(path) -> dict[str, LabeledSamples]:
    """Read ``resistance_kohm,label`` rows grouped by label (file order kept)."""
    path = Path(path)
    groups: dict[str, list[float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(c.strip() for c in header) != SAMPLES_HEADER:
            raise ParseError(f"expected header {','.join(SAMPLES_HEADER)}", 1, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ParseError("expected two columns", lineno, path)
            label = row[1].strip() or "unlabeled"
            if label not in LABELS:
                raise ParseError(f"unknown label {label!r}", lineno, path)
            try:
                value = float(row[0])
            except ValueError:
                raise ParseError(f"non-numeric resistance {row[0]!r}", lineno, path) from None
            if not (math.isfinite(value) and value > 0):
                raise ParseError("resistance must be finite and > 0", lineno, path)
            groups.setdefault(label, []).append(value)
    return {k: LabeledSamples(np.array(v), k) for k, v in groups.items()}


def save_samples(groups, path) -> None:
    lines = [",".join(SAMPLES_HEADER)]
    for g in groups:
        lines += [f"{float(v)!r},{g.label}" for v in g.values]
    Path(path).write_text("\n".join(lines) + "\n")
