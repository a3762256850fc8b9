"""``gslith`` command line: calibrate, compile, simulate, verify, analyze.

Exit codes: 0 success, 1 I/O or parse error, 2 domain error (bad
calibration, infeasible target, ...), 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from .contrast import (
    DEFAULT_THICKNESS_UM,
    fit_contrast,
    load_calibration,
    load_contrast,
    save_contrast,
)
from .errors import DomainError, GslError, InvalidParameterError, ParseError
from .grids import DoseMap, HeightMap, format_float, read_grid, write_grid
from .kernel import DEFAULT_TRUNCATION, default_psf, discretize, load_psf
from .metrology import circle_fit, load_profile_trace, load_transmission, power_shift
from .pec import (
    BOUNDARIES,
    DEFAULT_LEVELS,
    export_layers,
    forward_simulate,
    quantize,
    solve_dose,
)
from .profile import BridgeSpec, arc_bridge_height_map
from .stats import (
    LABELS,
    ecdf,
    empirical_prior,
    format_yield_csv,
    format_yield_table,
    kde,
    load_samples,
    posterior_crossing,
    posterior_curve,
    yield_summary,
)

log = logging.getLogger("gslith")

EXIT_OK, EXIT_IO, EXIT_DOMAIN, EXIT_NOCONV = 0, 1, 2, 3


def _emit(lines):
    for line in lines:
        print(line)


def _figures():
    from . import plotting
    return plotting


def _load_psf(path):
    return default_psf() if path is None else load_psf(path)


def _kernel(psf_path, pitch, truncation):
    return discretize(_load_psf(psf_path), pitch, truncation)


def cmd_fit_contrast(args):
    samples = load_calibration(args.samples)
    curve = fit_contrast(samples, args.full_height)
    d = np.array([s.dose for s in samples])
    h = np.array([s.height for s in samples])
    resid = float(np.sqrt(np.mean((curve.height(d) - h) ** 2)))
    out = Path(args.output)
    save_contrast(curve, out, resid)
    _emit([
        f"full_height_um={curve.full_height:.9g}",
        f"onset_dose_uC_cm2={curve.onset_dose:.9g}",
        f"clearing_dose_uC_cm2={curve.clearing_dose:.9g}",
        f"knots={curve.doses.size}",
        f"residual_rms_um={resid:.9g}",
        f"model={out}",
    ])
    if args.figures:
        _figures().plot_contrast(curve, out.with_suffix(".png"), samples)
    return EXIT_OK


def cmd_gen_bridge(args):
    spec = BridgeSpec(args.span, args.apex, args.width, args.margin)
    shape = None
    if args.nrows or args.ncols:
        if not (args.nrows and args.ncols):
            raise InvalidParameterError("give both --nrows and --ncols")
        shape = (args.nrows, args.ncols)
    target = arc_bridge_height_map(spec, args.thickness, args.pitch, shape)
    out = Path(args.output)
    write_grid(target, out)
    _emit([f"grid={out}", f"ncols={target.ncols}", f"nrows={target.nrows}",
           f"pitch_um={target.pitch:.9g}", f"arc_radius_um={spec.radius:.9g}"])
    if args.figures:
        _figures().plot_grid(target, out.with_suffix(".png"), "target height", "height (um)")
    return EXIT_OK


def _read_config(path):
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with path.open() as fh:
        cp.read_file(fh)
    base = path.parent

    def get(section, key, default=None, conv=str):
        if cp.has_option(section, key):
            raw = cp.get(section, key).strip()
            try:
                return conv(raw)
            except ValueError:
                raise ParseError(f"bad value for [{section}] {key}: {raw!r}", None, path) from None
        return default

    def rel(p):
        return None if p is None else (base / p)

    if get("inputs", "target") is None or get("inputs", "contrast") is None:
        raise ParseError("config needs [inputs] target and contrast", None, path)
    cfg = {
        "psf": rel(get("inputs", "psf")),
        "contrast": rel(get("inputs", "contrast")),
        "full_height": get("inputs", "full_height", None, float),
        "target": rel(get("inputs", "target")),
        "tol": get("solver", "tol", None, float),
        "max_iter": get("solver", "max_iter", 200, int),
        "relaxation": get("solver", "relaxation", 1.0, float),
        "max_dose": get("solver", "max_dose", None, float),
        "boundary": get("solver", "boundary", "zero-pad"),
        "truncation": get("solver", "truncation", DEFAULT_TRUNCATION, float),
        "directory": rel(get("output", "directory", ".")),
        "levels": get("output", "levels", DEFAULT_LEVELS, int),
    }
    if cfg["boundary"] not in BOUNDARIES:
        raise ParseError(f"boundary must be one of {BOUNDARIES}", None, path)
    return cfg


def cmd_compile(args):
    cfg = _read_config(args.config)
    curve = load_contrast(cfg["contrast"], cfg["full_height"])
    target = read_grid(cfg["target"])
    if not isinstance(target, HeightMap):
        raise ParseError("target grid must hold heights", None, cfg["target"])
    kernel = _kernel(cfg["psf"], target.pitch, cfg["truncation"])
    outdir = Path(cfg["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        dose, report = solve_dose(target, kernel, curve, cfg["tol"], cfg["max_iter"],
                                  cfg["relaxation"], cfg["max_dose"], cfg["boundary"],
                                  args.threads)
    except DomainError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            (outdir / "report.txt").write_text("\n".join(rep.lines()) + "\n")
        if getattr(exc, "worst_cells", None) is not None:
            write_grid(HeightMap(exc.worst_cells.astype(float), target.pitch),
                       outdir / "infeasible_cells.grid")
        raise
    layers = quantize(dose, cfg["levels"])
    write_grid(dose, outdir / "dose.grid")
    export_layers(layers, outdir / "dose.layers")
    sim = forward_simulate(dose, kernel, curve, cfg["boundary"], args.threads)
    write_grid(sim, outdir / "simulated.grid")
    lines = report.lines() + [f"layers={len(layers)}", f"rectangles={layers.n_rects}"]
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")
    _emit(lines[:7] + lines[-2:])
    if args.figures:
        plt = _figures()
        plt.plot_grid(target, outdir / "target.png", "target height", "height (um)")
        plt.plot_grid(dose, outdir / "dose.png", "dose", "dose (uC/cm2)", cmap="magma")
        plt.plot_grid(sim, outdir / "simulated.png", "simulated height", "height (um)")
        plt.plot_psf_cdf(_load_psf(cfg["psf"]), outdir / "psf_cdf.png")
        plt.plot_contrast(curve, outdir / "contrast.png")
    return EXIT_OK if report.converged else EXIT_NOCONV


def cmd_simulate(args):
    dose = read_grid(args.dose)
    if not isinstance(dose, DoseMap):
        raise ParseError("simulate needs a dose grid", None, args.dose)
    curve = load_contrast(args.contrast, args.full_height)
    kernel = _kernel(args.psf, dose.pitch, args.truncation)
    sim = forward_simulate(dose, kernel, curve, args.boundary, args.threads)
    out = Path(args.output)
    write_grid(sim, out)
    lines = [f"grid={out}"]
    if args.target:
        target = read_grid(args.target)
        target.check_compatible(sim)
        if target.shape != sim.shape:
            raise InvalidParameterError("target and dose grids differ in shape")
        err = np.abs(sim.values - target.values)
        lines += [f"max_error_um={err.max():.9g}",
                  f"rms_error_um={np.sqrt(np.mean(err ** 2)):.9g}"]
    _emit(lines)
    if args.figures:
        _figures().plot_grid(sim, out.with_suffix(".png"), "simulated height", "height (um)")
    return EXIT_OK


def cmd_circle_fit(args):
    trace = load_profile_trace(args.trace)
    fit = circle_fit(trace)
    _emit([f"center_x_um={fit.a:.9g}", f"center_h_um={fit.b:.9g}",
           f"radius_um={fit.radius:.9g}", f"rms_residual_um={fit.rms_residual:.9g}",
           f"iterations={fit.iterations}", f"samples={len(trace)}"])
    if args.figures:
        _figures().plot_circle_fit(trace, fit, Path(args.figures))
    return EXIT_OK


def cmd_shift(args):
    low = load_transmission(args.low)
    high = load_transmission(args.high)
    res = power_shift(low, high, args.threshold)
    _emit(res.lines())
    if args.figures:
        _figures().plot_transmission(low, high, Path(args.figures))
    return EXIT_OK


def _write_csv(path, header, cols):
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else format_float(v)
                              for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_stats(args):
    groups = load_samples(args.samples)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    ecdfs, dens = {}, {}
    lines = []
    for label in LABELS:
        if label not in groups:
            continue
        g = groups[label]
        e = ecdf(g)
        ecdfs[label] = e
        _write_csv(outdir / f"ecdf_{label}.csv", ("resistance_kohm", "cdf"), (e.x, e.cdf))
        lines.append(f"n[{label}]={len(g)}")
        if len(g) >= 3:
            est = kde(g, args.bandwidth)
            dens[label] = est
            _write_csv(outdir / f"density_{label}.csv", ("resistance_kohm", "pdf", "cdf"),
                       (est.grid, est.pdf, est.cdf))
            lines.append(f"bandwidth_kohm[{label}]={est.bandwidth:.9g}")
    if "operable" in dens and "non-operable" in dens:
        prior = args.prior
        if prior is None:
            prior = empirical_prior(len(groups["operable"]), len(groups["non-operable"]))
        lines.append(f"prior={prior:.9g}")
        sweep = args.bandwidth_sweep or []
        curve = posterior_curve(dens["operable"], dens["non-operable"], prior)
        _write_csv(outdir / "posterior.csv", ("resistance_kohm", "posterior", "extrapolated"),
                   (curve.grid, curve.values, curve.extrapolated.astype(int)))
        cross = posterior_crossing(curve)
        lines.append("crossing_kohm=" + ("none" if cross is None else f"{cross:.6g}"))
        for bw in sweep:
            c = posterior_curve(kde(groups["operable"], bw), kde(groups["non-operable"], bw),
                                prior)
            _write_csv(outdir / f"posterior_bw{bw:g}.csv",
                       ("resistance_kohm", "posterior", "extrapolated"),
                       (c.grid, c.values, c.extrapolated.astype(int)))
            x = posterior_crossing(c)
            lines.append(f"crossing_kohm[bw={bw:g}]=" + ("none" if x is None else f"{x:.6g}"))
        if args.figures:
            _figures().plot_posterior(curve, outdir / "posterior.png")
    if args.figures and dens:
        _figures().plot_distributions(ecdfs, dens, outdir / "distributions.png")
    _emit(lines)
    return EXIT_OK


def cmd_yield(args):
    counts = args.counts
    if len(counts) % 2:
        raise InvalidParameterError("counts come in pairs: n_operable n_total")
    pairs = list(zip(counts[0::2], counts[1::2]))
    labels = args.labels.split(",") if args.labels else [f"group{k + 1}" for k in range(len(pairs))]
    if len(labels) != len(pairs):
        raise InvalidParameterError("number of labels does not match number of count pairs")
    rows = yield_summary([(lab, k, n) for lab, (k, n) in zip(labels, pairs)])
    sys.stdout.write(format_yield_table(rows))
    if args.csv:
        Path(args.csv).write_text(format_yield_csv(rows))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gslith", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version",
                   version="\n".join([f"gslith {__version__}", *FORMAT_VERSIONS]))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-contrast", help="fit a contrast curve to calibration samples")
    s.add_argument("samples")
    s.add_argument("--full-height", type=float, default=DEFAULT_THICKNESS_UM)
    s.add_argument("-o", "--output", default="contrast.txt")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_fit_contrast)

    s = sub.add_parser("gen-bridge", help="write an arc airbridge target height grid")
    s.add_argument("--span", type=float, default=28.0)
    s.add_argument("--apex", type=float, default=3.0)
    s.add_argument("--width", type=float, default=8.0)
    s.add_argument("--margin", type=float, default=4.0)
    s.add_argument("--thickness", type=float, default=DEFAULT_THICKNESS_UM)
    s.add_argument("--pitch", type=float, default=0.5)
    s.add_argument("--nrows", type=int)
    s.add_argument("--ncols", type=int)
    s.add_argument("-o", "--output", default="target.grid")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_gen_bridge)

    s = sub.add_parser("compile", help="solve a proximity-corrected dose map from a config")
    s.add_argument("config")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", help="forward-simulate remnant height for a dose grid")
    s.add_argument("dose")
    s.add_argument("--psf", default=None, help="PSF file (default: built-in double Gaussian)")
    s.add_argument("--contrast", required=True)
    s.add_argument("--full-height", type=float, default=None)
    s.add_argument("--boundary", choices=BOUNDARIES, default="zero-pad")
    s.add_argument("--truncation", type=float, default=DEFAULT_TRUNCATION)
    s.add_argument("--target", help="height grid to compare against")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("-o", "--output", default="simulated.grid")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("circle-fit", help="fit a circle to a profilometer trace")
    s.add_argument("trace")
    s.add_argument("--figures", metavar="PNG")
    s.set_defaults(func=cmd_circle_fit)

    s = sub.add_parser("shift", help="power-dependent resonator shift")
    s.add_argument("low")
    s.add_argument("high")
    s.add_argument("--threshold", type=float, default=None, help="MHz")
    s.add_argument("--figures", metavar="PNG")
    s.set_defaults(func=cmd_shift)

    s = sub.add_parser("stats", help="ECDF, KDE and operability posterior from samples")
    s.add_argument("samples")
    s.add_argument("-o", "--output", default="stats")
    s.add_argument("--bandwidth", type=float, default=None, help="kOhm (default Silverman)")
    s.add_argument("--prior", type=float, default=None)
    s.add_argument("--bandwidth-sweep", type=lambda t: [float(v) for v in t.split(",")],
                   default=None, help="comma-separated bandwidths")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("yield", help="operable fractions with Wilson intervals")
    s.add_argument("counts", type=int, nargs="+", help="n_operable n_total pairs")
    s.add_argument("--labels")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_yield)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    with warnings.catch_warnings():
        warnings.showwarning = lambda message, category, *a, **k: log.warning(
            "%s: %s", category.__name__, message)
        return _run(args)


def _run(args) -> int:
    try:
        return args.func(args)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except GslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
