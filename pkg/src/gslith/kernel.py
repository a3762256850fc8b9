"""Point-spread function of the e-beam energy deposit and its discretization.

The continuous kernel is a mixture of radially symmetric Gaussians::

    K(r) = sum_i w_i / (pi sigma_i**2) * exp(-r**2 / sigma_i**2)

with weights summing to one, so a dose D spread over a large area deposits
energy D (dose-equivalent units). Each Gaussian is separable, which lets
:func:`discretize` integrate the kernel exactly over every grid cell.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .errors import InvalidParameterError, ParseError, UnderResolvedKernelWarning

__all__ = [
    "PointSpreadFunction",
    "DiscreteKernel",
    "make_double_gaussian",
    "default_psf",
    "radial_energy_cdf",
    "truncation_radius",
    "discretize",
    "discrete_radial_cdf",
    "load_psf",
    "save_psf",
]

DEFAULT_ALPHA_UM = 0.03
DEFAULT_BETA_UM = 30.0
DEFAULT_ETA = 1.0
DEFAULT_TRUNCATION = 1e-4


@dataclass(frozen=True)
class PointSpreadFunction:
    """Gaussian-mixture PSF.

    ``terms`` is a tuple of ``(weight, sigma_um)`` pairs with weights summing
    to one. ``normalization`` is the factor that was applied to the raw
    weights to get there (1.0 when they were already normalized).
    """

    terms: tuple[tuple[float, float], ...]
    normalization: float = 1.0

    def __post_init__(self):
        if len(self.terms) == 0:
            raise InvalidParameterError("PSF needs at least one term")
        for w, s in self.terms:
            if not (math.isfinite(w) and w >= 0):
                raise InvalidParameterError(f"PSF weight must be finite and >= 0, got {w}")
            if not (math.isfinite(s) and s > 0):
                raise InvalidParameterError(f"PSF sigma must be > 0, got {s}")
        total = math.fsum(w for w, _ in self.terms)
        if abs(total - 1.0) > 1e-12:
            raise InvalidParameterError(f"PSF weights sum to {total!r}, expected 1")

    @classmethod
    def from_terms(cls, terms) -> "PointSpreadFunction":
        """Build a PSF from unnormalized ``(weight, sigma)`` pairs."""
        terms = [(float(w), float(s)) for w, s in terms]
        if not terms:
            raise InvalidParameterError("PSF needs at least one term")
        total = math.fsum(w for w, _ in terms)
        if not total > 0:
            raise InvalidParameterError("PSF weights must have a positive sum")
        factor = 1.0 / total
        normed = [(w * factor, s) for w, s in terms]
        # push the rounding residue into the largest weight so the sum is exact
        resid = 1.0 - math.fsum(w for w, _ in normed)
        k = max(range(len(normed)), key=lambda i: normed[i][0])
        normed[k] = (normed[k][0] + resid, normed[k][1])
        return cls(tuple(normed), factor)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.terms])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s for _, s in self.terms])

    def density(self, r):
        """Energy per unit area at radius ``r`` (1/um^2)."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for w, s in self.terms:
            out += w / (math.pi * s * s) * np.exp(-(r * r) / (s * s))
        return out


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """PSF integrated over square cells of side ``pitch`` (um).

    ``weights`` has odd side length with the beam position in the center cell.
    """

    weights: np.ndarray
    pitch: float
    radius: float

    @property
    def half_width(self) -> int:
        return self.weights.shape[0] // 2

    def radial_cdf(self, r):
        return discrete_radial_cdf(self, r)


def make_double_gaussian(alpha: float, beta: float, eta: float) -> PointSpreadFunction:
    """Forward-scatter/backscatter PSF with weights 1/(1+eta) and eta/(1+eta).

    A zero ``eta`` drops the backscatter term entirely.
    """
    if not (alpha > 0 and beta > 0):
        raise InvalidParameterError(f"alpha and beta must be > 0, got {alpha}, {beta}")
    if not (eta >= 0 and math.isfinite(eta)):
        raise InvalidParameterError(f"eta must be >= 0, got {eta}")
    if eta == 0:
        return PointSpreadFunction(((1.0, float(alpha)),))
    w_fwd = 1.0 / (1.0 + eta)
    return PointSpreadFunction(((w_fwd, float(alpha)), (1.0 - w_fwd, float(beta))))


def default_psf() -> PointSpreadFunction:
    return make_double_gaussian(DEFAULT_ALPHA_UM, DEFAULT_BETA_UM, DEFAULT_ETA)


def radial_energy_cdf(psf: PointSpreadFunction, r):
    """Fraction of the deposited energy inside a disc of radius ``r`` (um)."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise InvalidParameterError("radius must be >= 0")
    out = np.zeros_like(r_arr)
    for w, s in psf.terms:
        out += w * -np.expm1(-(r_arr * r_arr) / (s * s))
    np.clip(out, 0.0, 1.0, out=out)
    if np.ndim(r) == 0:
        return float(out)
    return out


def truncation_radius(psf: PointSpreadFunction, fraction: float) -> float:
    """Smallest radius holding at least ``1 - fraction`` of the energy."""
    if not 0 < fraction < 1:
        raise InvalidParameterError(f"truncation fraction must be in (0, 1), got {fraction}")

    def tail(r):
        return sum(w * math.exp(-(r * r) / (s * s)) for w, s in psf.terms) - fraction

    hi = max(psf.sigmas) * math.sqrt(math.log(1.0 / fraction))
    if tail(0.0) <= 0:
        return 0.0
    r = brentq(tail, 0.0, hi, xtol=1e-12, rtol=1e-14)
    # brentq may land a hair short of the root
    while tail(r) > 0:
        r = math.nextafter(r, math.inf)
    return r


def _cell_masses_1d(sigma: float, pitch: float, half: int) -> np.ndarray:
    """Mass of the 1D marginal exp(-x^2/sigma^2)/(sigma sqrt(pi)) per cell, k = -half..half."""
    k = np.arange(0, half + 1, dtype=float)
    lo = (k - 0.5) * pitch / sigma
    hi = (k + 0.5) * pitch / sigma
    pos = 0.5 * (erfc(lo) - erfc(hi))
    pos[0] = 1.0 - erfc(0.5 * pitch / sigma)
    return np.concatenate([pos[:0:-1], pos])


def discretize(psf: PointSpreadFunction, pitch: float,
               truncation_fraction: float = DEFAULT_TRUNCATION) -> DiscreteKernel:
    """Integrate the PSF over grid cells and truncate it to a disc.

    The truncation radius keeps at least ``1 - truncation_fraction`` of the
    energy; the truncated grid is renormalized to sum to one. A pitch coarser
    than the narrowest sigma emits :class:`UnderResolvedKernelWarning`: the
    forward-scatter term then lands almost entirely in the center cell.
    """
    if not pitch > 0:
        raise InvalidParameterError(f"pitch must be > 0, got {pitch}")
    if not 0 < truncation_fraction < 1:
        raise InvalidParameterError(
            f"truncation fraction must be in (0, 1), got {truncation_fraction}")
    smallest = min(psf.sigmas)
    if pitch > smallest:
        warnings.warn(
            f"pitch {pitch} um exceeds the narrowest PSF sigma {smallest} um; "
            "forward scattering is not resolved",
            UnderResolvedKernelWarning, stacklevel=2)
    radius = truncation_radius(psf, truncation_fraction)
    half = int(math.ceil(radius / pitch))
    grid = np.zeros((2 * half + 1, 2 * half + 1))
    for w, s in psf.terms:
        m = _cell_masses_1d(s, pitch, half)
        grid += w * np.outer(m, m)
    k = np.arange(-half, half + 1) * pitch
    rr = np.hypot(k[:, None], k[None, :])
    grid[rr > radius] = 0.0
    grid /= grid.sum()
    return DiscreteKernel(grid, float(pitch), float(radius))


def discrete_radial_cdf(kernel: DiscreteKernel, r):
    """Radial cumulative of a discrete kernel.

    Each cell's mass is spread uniformly over a radial shell one pitch wide
    centered on the cell-center radius, which removes most of the lattice
    staircase.
    """
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    h = kernel.half_width
    k = np.arange(-h, h + 1) * kernel.pitch
    rho = np.hypot(k[:, None], k[None, :]).ravel()
    mass = kernel.weights.ravel()
    keep = mass > 0
    rho, mass = rho[keep], mass[keep]
    order = np.argsort(rho, kind="stable")
    rho, mass = rho[order], mass[order]
    p = kernel.pitch
    lo = np.maximum(rho - 0.5 * p, 0.0)
    hi = rho + 0.5 * p
    out = np.empty_like(r_arr)
    for idx, ri in enumerate(r_arr):
        frac = np.clip((ri - lo) / (hi - lo), 0.0, 1.0)
        out[idx] = np.dot(mass, frac)
    if np.ndim(r) == 0:
        return float(out[0])
    return out


def load_psf(path) -> PointSpreadFunction:
    """Read a PSF file: one ``weight sigma_um`` pair per line, ``#`` comments."""
    path = Path(path)
    terms = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'weight sigma_um'", lineno, path)
            try:
                w, s = float(parts[0]), float(parts[1])
            except ValueError:
                raise ParseError(f"non-numeric PSF term {line!r}", lineno, path) from None
            terms.append((w, s))
    if not terms:
        raise ParseError("PSF file holds no terms", None, path)
    try:
        return PointSpreadFunction.from_terms(terms)
    except InvalidParameterError as exc:
        raise ParseError(str(exc), None, path) from None


def save_psf(psf: PointSpreadFunction, path) -> None:
    lines = ["# weight sigma_um"]
    lines += [f"{w:.17g} {s:.17g}" for w, s in psf.terms]
    Path(path).write_text("\n".join(lines) + "\n")
