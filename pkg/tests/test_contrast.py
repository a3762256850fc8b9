import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gslith.contrast import (
    ContrastCurve,
    ContrastSample,
    dose_for_height,
    fit_contrast,
    fit_power_law,
    height_for_dose,
    isotonic_decreasing,
    load_calibration,
    load_contrast,
    power_law_height,
    save_calibration,
    save_contrast,
)
from gslith.errors import (
    BadCalibrationError,
    IncompleteCalibrationError,
    InvalidParameterError,
    ParseError,
)

T0, D0, DC = 3.0, 300.0, 1500.0


def linear_samples(n=9):
    d = np.linspace(D0, DC, n)
    h = T0 * (1 - (d - D0) / (DC - D0))
    h[0], h[-1] = T0, 0.0
    # plateau points on both sides
    d = np.concatenate(([100.0], d, [2500.0]))
    h = np.concatenate(([T0], h, [0.0]))
    return [ContrastSample(a, b) for a, b in zip(d, h)]


def test_linear_samples_reproduced_exactly():
    samples = linear_samples()
    c = fit_contrast(samples, T0)
    assert c.onset_dose == D0 and c.clearing_dose == DC
    for s in samples:
        assert c.height(s.dose) == pytest.approx(s.height, abs=1e-9)


def test_two_samples_incomplete():
    with pytest.raises(IncompleteCalibrationError):
        fit_contrast([(100, 3.0), (2000, 0.0)], T0)


def test_missing_anchors():
    with pytest.raises(IncompleteCalibrationError):
        fit_contrast([(100, 2.0), (200, 1.5), (400, 1.0), (2000, 0.0)], T0)
    with pytest.raises(IncompleteCalibrationError):
        fit_contrast([(100, 3.0), (200, 2.5), (400, 2.0), (2000, 1.0)], T0)


def test_non_monotone_rejected():
    bad = [(100, 3.0), (200, 1.0), (300, 2.5), (400, 0.5), (600, 2.0), (900, 0.0)]
    with pytest.raises(BadCalibrationError):
        fit_contrast(bad, T0)


def test_duplicate_doses_rejected():
    with pytest.raises(BadCalibrationError):
        fit_contrast([(100, 3.0), (100, 2.9), (300, 1.0), (900, 0.0)], T0)


def test_noisy_power_law_within_tenth_of_thickness():
    # oracle: the generator itself; noise uniform in +-5% of T0
    d = np.geomspace(100, 3000, 30)
    x = np.geomspace(D0, DC, 2000)
    truth = power_law_height(x, T0, D0, DC, 2.0)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        h = power_law_height(d, T0, D0, DC, 2.0) + rng.uniform(-0.05, 0.05, d.size) * T0
        c = fit_contrast(list(zip(d, np.clip(h, 0, None))), T0)
        assert np.max(np.abs(c.height(x) - truth)) <= 0.1 * T0


def test_linear_curve_midpoint():
    c = fit_contrast(linear_samples(), T0)
    assert height_for_dose(c, 0.0) == T0
    assert height_for_dose(c, DC) == 0.0
    assert height_for_dose(c, (D0 + DC) / 2) == pytest.approx(T0 / 2, abs=1e-9)
    with pytest.raises(InvalidParameterError):
        height_for_dose(c, -1.0)


def test_inverse_boundaries(curve):
    assert dose_for_height(curve, T0) == curve.onset_dose
    assert dose_for_height(curve, 0.0) == curve.clearing_dose
    with pytest.raises(InvalidParameterError):
        dose_for_height(curve, T0 + 0.1)
    with pytest.raises(InvalidParameterError):
        dose_for_height(curve, -0.1)


def test_round_trip_random_heights(curve):
    rng = np.random.default_rng(7)
    h = rng.uniform(0, T0, 100)
    h = h[(h > 0) & (h < T0)]
    assert np.max(np.abs(curve.height(curve.dose(h)) - h)) <= 1e-4 * T0
    d = rng.uniform(D0, DC, 100)
    assert np.max(np.abs(curve.dose(curve.height(d)) / d - 1)) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 4000), min_size=2, max_size=30))
def test_monotone_and_in_range(doses):
    c = ContrastCurve.from_power_law(T0, D0, DC, 1.5)
    d = np.sort(np.array(doses))
    h = c.height(d)
    assert np.all(np.diff(h) <= 0)
    assert np.all((h >= 0) & (h <= T0))
    inner = d[(d > D0) & (d < DC)]
    if inner.size > 1 and np.all(np.diff(inner) > 1e-6 * inner[:-1]):
        assert np.all(np.diff(c.height(inner)) < 0)


def test_isotonic_pools_violations():
    fitted, blocks = isotonic_decreasing([3, 2, 2.5, 1, 0])
    assert np.allclose(fitted, [3, 2.25, 2.25, 1, 0])
    assert blocks == [(0, 1), (1, 3), (3, 4), (4, 5)]


def test_power_law_fit_recovers_parameters():
    d = np.geomspace(100, 3000, 40)
    h = power_law_height(d, T0, D0, DC, 2.0)
    _, (onset, clearing, gamma) = fit_power_law(list(zip(d, h)), T0)
    assert onset == pytest.approx(D0, rel=1e-3)
    assert clearing == pytest.approx(DC, rel=1e-3)
    assert gamma == pytest.approx(2.0, rel=1e-3)


def test_calibration_csv_round_trip(tmp_path):
    samples = linear_samples()
    save_calibration(samples, tmp_path / "cal.csv")
    back = load_calibration(tmp_path / "cal.csv")
    assert [(s.dose, s.height) for s in back] == pytest.approx(
        [(s.dose, s.height) for s in samples])
    assert (tmp_path / "cal.csv").read_text().startswith("dose_uC_cm2,height_um\n")


def test_calibration_csv_errors(tmp_path):
    p = tmp_path / "cal.csv"
    p.write_text("dose,height\n1,2\n")
    with pytest.raises(ParseError):
        load_calibration(p)
    p.write_text("dose_uC_cm2,height_um\n1,2\nx,3\n")
    with pytest.raises(ParseError) as exc:
        load_calibration(p)
    assert exc.value.lineno == 3


def test_contrast_model_file_round_trip(tmp_path, curve):
    save_contrast(curve, tmp_path / "c.txt", residual_rms=0.01)
    assert load_contrast(tmp_path / "c.txt") == curve
    save_calibration(linear_samples(), tmp_path / "cal.csv")
    fitted = load_contrast(tmp_path / "cal.csv", T0)
    assert fitted.onset_dose == D0
