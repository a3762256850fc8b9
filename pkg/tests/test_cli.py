import subprocess
import sys

import numpy as np
import pytest

from gslith.cli import main
from gslith.contrast import ContrastCurve, load_contrast, save_calibration, save_contrast
from gslith.grids import read_grid
from gslith.metrology import TransmissionTrace, lorentzian_dip, save_transmission
from gslith.pec import import_layers


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def workdir(tmp_path, curve):
    save_contrast(curve, tmp_path / "contrast.txt")
    return tmp_path


def write_config(path, target="target.grid", outdir="out", extra=""):
    path.write_text(
        "[inputs]\n"
        f"contrast = contrast.txt\ntarget = {target}\n\n"
        "[solver]\ntol = 0.03\nmax_iter = 200\n" + extra + "\n"
        f"[output]\ndirectory = {outdir}\nlevels = 256\n")


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "gslgrid 1" in out and "gsllayers 1" in out


def test_entry_point_module():
    res = subprocess.run([sys.executable, "-m", "gslith.cli", "yield", "18", "25"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "0.720" in res.stdout


def test_yield(capsys, tmp_path):
    code, out, _ = run(capsys, "yield", 18, 25, 1, 9, 28, 44, "--labels", "no-AB,reflow,GSL",
                       "--csv", tmp_path / "y.csv")
    assert code == 0
    assert "0.720" in out and "0.111" in out and "0.636" in out
    assert (tmp_path / "y.csv").read_text().startswith("group,operable,total")
    code, _, err = run(capsys, "yield", 5, 4)
    assert code == 2 and "inconsistent" in err


def test_missing_file_exit_1(capsys, tmp_path):
    missing = tmp_path / "nope.csv"
    code, _, err = run(capsys, "fit-contrast", missing)
    assert code == 1 and str(missing) in err


def test_fit_contrast_exact_knots(capsys, tmp_path):
    d = np.array([100, 300, 600, 900, 1200, 1500, 2000], float)
    h = np.interp(d, [300, 1500], [3, 0])
    save_calibration(list(zip(d, h)), tmp_path / "cal.csv")
    code, out, _ = run(capsys, "fit-contrast", tmp_path / "cal.csv", "-o", tmp_path / "c.txt")
    assert code == 0
    vals = kv(out)
    assert float(vals["onset_dose_uC_cm2"]) == 300.0
    assert float(vals["clearing_dose_uC_cm2"]) == 1500.0


def test_fit_contrast_residual_matches_recomputation(capsys, tmp_path):
    rng = np.random.default_rng(4)
    ref = ContrastCurve.from_power_law(3.0, 300, 1500, 2.0)
    d = np.geomspace(150, 3000, 60)
    h = np.clip(ref.height(d) + rng.uniform(-0.1, 0.1, d.size), 0, 3)
    save_calibration(list(zip(d, h)), tmp_path / "cal.csv")
    code, out, _ = run(capsys, "fit-contrast", tmp_path / "cal.csv", "-o", tmp_path / "c.txt")
    assert code == 0
    fitted = load_contrast(tmp_path / "c.txt")
    resid = np.sqrt(np.mean((fitted.height(d) - h) ** 2))
    assert float(kv(out)["residual_rms_um"]) == pytest.approx(resid, rel=1e-8)


def test_fit_contrast_bad_calibration_exit_2(capsys, tmp_path):
    d = np.array([100.0, 200, 300, 400, 500, 600])
    h = np.array([0.0, 0.5, 1.0, 2.0, 2.5, 3.0])  # increasing with dose
    save_calibration(list(zip(d, h)), tmp_path / "cal.csv")
    code, _, _ = run(capsys, "fit-contrast", tmp_path / "cal.csv", "-o", tmp_path / "c.txt")
    assert code == 2


def test_bridge_compile_simulate_round_trip(capsys, workdir):
    code, out, _ = run(capsys, "gen-bridge", "-o", workdir / "target.grid")
    assert code == 0 and kv(out)["ncols"] == "88"
    write_config(workdir / "run.ini")
    code, out, _ = run(capsys, "compile", workdir / "run.ini")
    assert code == 0
    rep = kv(out)
    assert rep["converged"] == "true"
    outdir = workdir / "out"
    for name in ("dose.grid", "dose.layers", "simulated.grid", "report.txt"):
        assert (outdir / name).exists()
    assert import_layers(outdir / "dose.layers").n_rects > 0
    code, out, _ = run(capsys, "simulate", outdir / "dose.grid", "--contrast",
                       workdir / "contrast.txt", "--target", workdir / "target.grid",
                       "-o", workdir / "sim.grid")
    assert code == 0
    assert float(kv(out)["max_error_um"]) <= 0.03
    assert (workdir / "sim.grid").read_bytes() == (outdir / "simulated.grid").read_bytes()


def test_compile_is_deterministic(capsys, workdir):
    run(capsys, "gen-bridge", "-o", workdir / "target.grid", "--nrows", 64, "--ncols", 96)
    write_config(workdir / "a.ini", outdir="a")
    write_config(workdir / "b.ini", outdir="b")
    assert run(capsys, "compile", workdir / "a.ini")[0] == 0
    assert run(capsys, "compile", workdir / "b.ini")[0] == 0
    for name in ("dose.grid", "dose.layers", "simulated.grid", "report.txt"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()
    # emitted grids survive a read/write cycle unchanged
    g = read_grid(workdir / "a" / "dose.grid")
    from gslith.grids import write_grid
    write_grid(g, workdir / "again.grid")
    assert (workdir / "again.grid").read_bytes() == (workdir / "a" / "dose.grid").read_bytes()


def test_compile_non_convergence_exit_3(capsys, workdir):
    run(capsys, "gen-bridge", "-o", workdir / "target.grid")
    workdir.joinpath("run.ini").write_text(
        "[inputs]\ncontrast = contrast.txt\ntarget = target.grid\n"
        "[solver]\ntol = 1e-9\nmax_iter = 2\n[output]\ndirectory = out\n")
    code, out, _ = run(capsys, "compile", workdir / "run.ini")
    assert code == 3 and kv(out)["converged"] == "false"


def test_compile_infeasible_exit_2(capsys, workdir):
    from gslith.grids import HeightMap, write_grid
    t = np.zeros((64, 64))
    t[32, 32] = 3.0
    write_grid(HeightMap(t, 0.5), workdir / "spike.grid")
    write_config(workdir / "run.ini", target="spike.grid", extra="boundary = periodic\n")
    code, _, err = run(capsys, "compile", workdir / "run.ini")
    assert code == 2 and "infeasible" in err.lower()
    assert (workdir / "out" / "infeasible_cells.grid").exists()


def test_compile_bad_config_exit_1(capsys, workdir):
    (workdir / "bad.ini").write_text("[inputs]\ncontrast = contrast.txt\n")
    assert run(capsys, "compile", workdir / "bad.ini")[0] == 1


def lorentzian_trace(f0, power):
    f = np.linspace(6.045, 6.065, 2001)
    return TransmissionTrace(f, 10 * np.log10(lorentzian_dip(f, f0, 1e-3, 0.95)), power)


def test_shift_command(capsys, tmp_path):
    save_transmission(lorentzian_trace(6.0538, -110), tmp_path / "low.csv")
    save_transmission(lorentzian_trace(6.0560, -70), tmp_path / "high.csv")
    code, out, _ = run(capsys, "shift", tmp_path / "low.csv", tmp_path / "high.csv",
                       "--figures", tmp_path / "shift.png")
    assert code == 0
    vals = kv(out)
    assert (vals["shift_mhz"], vals["operable"], vals["sign"]) == ("2.2", "true", "positive")
    assert vals["threshold_source"] == "convention"
    assert (tmp_path / "shift.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_shift_flat_trace_exit_2(capsys, tmp_path):
    f = np.linspace(6.0, 6.1, 101)
    save_transmission(lorentzian_trace(6.0538, -110), tmp_path / "low.csv")
    save_transmission(TransmissionTrace(f, np.zeros(101)), tmp_path / "flat.csv")
    code, _, err = run(capsys, "shift", tmp_path / "low.csv", tmp_path / "flat.csv")
    assert code == 2 and "high-power" in err


def test_circle_fit_command(capsys, tmp_path):
    x = np.linspace(0, 28, 41)
    h = -31.17 + np.sqrt(34.17 ** 2 - (x - 14) ** 2)
    (tmp_path / "t.csv").write_text("x_um,height_um\n" + "".join(
        f"{float(a)!r},{max(float(b), 0.0)!r}\n" for a, b in zip(x, h)))
    code, out, _ = run(capsys, "circle-fit", tmp_path / "t.csv")
    assert code == 0
    assert float(kv(out)["radius_um"]) == pytest.approx(34.17, abs=1e-6)


def test_stats_command(capsys, tmp_path):
    rng = np.random.default_rng(0)
    op = rng.normal(15, 3, 300).clip(1)
    non = rng.normal(25, 3, 300)
    rows = [f"{float(v)!r},operable" for v in op] + [f"{float(v)!r},non-operable" for v in non]
    (tmp_path / "s.csv").write_text("resistance_kohm,label\n" + "\n".join(rows) + "\n")
    code, out, _ = run(capsys, "stats", tmp_path / "s.csv", "-o", tmp_path / "st",
                       "--bandwidth-sweep", "1,2", "--figures")
    assert code == 0
    vals = kv(out)
    assert vals["prior"] == "0.5"
    assert abs(float(vals["crossing_kohm"]) - 20) <= 1.0
    for name in ("ecdf_operable.csv", "density_non-operable.csv", "posterior.csv",
                 "posterior_bw1.csv", "posterior_bw2.csv", "posterior.png",
                 "distributions.png"):
        assert (tmp_path / "st" / name).exists()


def test_figures_flag_adds_pngs(capsys, workdir):
    run(capsys, "gen-bridge", "-o", workdir / "target.grid", "--figures")
    assert (workdir / "target.png").exists()
    write_config(workdir / "run.ini")
    assert run(capsys, "compile", workdir / "run.ini", "--figures")[0] == 0
    pngs = sorted(p.name for p in (workdir / "out").glob("*.png"))
    assert pngs == ["contrast.png", "dose.png", "psf_cdf.png", "simulated.png", "target.png"]
