"""Figure rendering for CLI reports.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects (no
pyplot state) and saved without software/date metadata so reruns produce
identical PNG files.
"""

from __future__ import annotations

import numpy as np
from matplotlib.figure import Figure

from .kernel import radial_energy_cdf

DPI = 100
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata=_META)


def _axes(width=5.0, height=3.6):
    fig = Figure(figsize=(width, height), layout="constrained")
    return fig, fig.add_subplot()


def plot_grid(grid, path, title=None, label=None, cmap="viridis"):
    fig, ax = _axes(5.0, 4.2)
    xmin, xmax, ymin, ymax = grid.extent
    im = ax.imshow(grid.values, extent=(xmin, xmax, ymin, ymax), cmap=cmap,
                   interpolation="nearest", origin="upper")
    fig.colorbar(im, ax=ax, label=label or grid.quantity)
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_psf_cdf(psf, path, r_max=None, mark=20.0):
    fig, ax = _axes()
    if r_max is None:
        r_max = 4 * max(s for _, s in psf.terms)
    r = np.linspace(0, r_max, 800)
    ax.plot(r, radial_energy_cdf(psf, r), color="C0")
    ax.axvline(mark, color="0.5", ls="--", lw=0.8)
    ax.set_xscale("symlog", linthresh=0.1)
    ax.set_xlabel("radius (um)")
    ax.set_ylabel("energy fraction inside radius")
    ax.set_ylim(0, 1.02)
    _save(fig, path)


def plot_contrast(curve, path, samples=None):
    fig, ax = _axes()
    d = np.geomspace(curve.onset_dose / 2, curve.clearing_dose * 1.5, 400)
    ax.plot(d, curve.height(d), color="C0", label="fit")
    if samples:
        ax.plot([s.dose for s in samples], [s.height for s in samples], "o", color="C3",
                ms=4, label="calibration")
        ax.legend(frameon=False)
    ax.set_xscale("log")
    ax.set_xlabel("dose (uC/cm2)")
    ax.set_ylabel("remnant height (um)")
    _save(fig, path)


def plot_circle_fit(trace, fit, path):
    fig, ax = _axes()
    ax.plot(trace.x, trace.h, color="C3", lw=1, label="trace")
    x = np.linspace(trace.x[0], trace.x[-1], 400)
    ax.plot(x, fit.upper_branch(x), color="C0", lw=1, label=f"circle R={fit.radius:.3g} um")
    ax.set_xlabel("position (um)")
    ax.set_ylabel("height (um)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_transmission(low, high, path):
    fig, ax = _axes()
    for trace, color, name in ((low, "C9", "low power"), (high, "C1", "high power")):
        tag = f" ({trace.power_dbm:g} dBm)" if trace.power_dbm is not None else ""
        ax.plot(trace.freq_ghz, trace.mag_db, color=color, lw=1, label=name + tag)
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("|S21| (dB)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_distributions(ecdfs, densities, path):
    fig = Figure(figsize=(8.0, 3.4), layout="constrained")
    ax1, ax2 = fig.subplots(1, 2)
    for k, label in enumerate(sorted(densities)):
        color = f"C{k}"
        e = ecdfs[label]
        ax1.step(e.x, e.cdf, where="post", color=color, lw=1, label=label)
        est = densities[label]
        ax1.plot(est.grid, est.cdf, color=color, lw=0.8, ls="--")
        ax2.plot(est.grid, est.pdf, color=color, lw=1, label=label)
    ax1.set_xlabel("resistance (kOhm)")
    ax1.set_ylabel("CDF")
    ax2.set_xlabel("resistance (kOhm)")
    ax2.set_ylabel("PDF (1/kOhm)")
    ax1.legend(frameon=False)
    _save(fig, path)


def plot_posterior(curve, path):
    fig, ax = _axes()
    v = np.where(curve.extrapolated, np.nan, curve.values)
    ax.plot(curve.grid, v, color="C2")
    ax.axhline(0.5, color="0.5", ls="--", lw=0.8)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("resistance (kOhm)")
    ax.set_ylabel("P(operable | R)")
    _save(fig, path)
