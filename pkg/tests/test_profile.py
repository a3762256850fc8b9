import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gslith.errors import (
    IncompatibleGridError,
    InvalidGeometryError,
    ParseError,
    TargetExceedsResistError,
)
from gslith.grids import DoseMap, EnergyMap, HeightMap, format_grid, read_grid, write_grid
from gslith.profile import (
    DEFAULT_BRIDGE,
    BridgeSpec,
    arc_bridge_height_map,
    arc_height,
    arc_radius,
    compose,
    uniform_map,
)


def circle_through(p1, p2, p3):
    """Center and radius of the circle through three points (linear solve)."""
    a = np.array([[2 * p[0], 2 * p[1], 1.0] for p in (p1, p2, p3)])
    b = np.array([p[0] ** 2 + p[1] ** 2 for p in (p1, p2, p3)])
    cx, cy, c = np.linalg.solve(a, b)
    return cx, cy, math.sqrt(c + cx * cx + cy * cy)


def test_arc_endpoints_and_apex():
    assert arc_height(14.0, 28, 3) == pytest.approx(0.0, abs=1e-12)
    assert arc_height(-14.0, 28, 3) == pytest.approx(0.0, abs=1e-12)
    assert arc_height(0.0, 28, 3) == 3.0


def test_half_circle():
    x = np.linspace(-3, 3, 13)
    assert arc_radius(6, 3) == 3
    assert np.allclose(arc_height(x, 6, 3), np.sqrt(9 - x * x), atol=1e-12)


def test_default_arc_against_three_point_circle():
    cx, cy, r = circle_through((-14, 0), (0, 3), (14, 0))
    assert arc_radius(28, 3) == pytest.approx(r, abs=1e-12)
    expected = cy + math.sqrt(r * r - 49)  # 2.27523984464203
    assert arc_height(7.0, 28, 3) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(2.27523984464203, abs=1e-12)


def test_bridge_map_regions():
    m = arc_bridge_height_map(DEFAULT_BRIDGE, 3.0, 0.5, (64, 96))
    xs, ys = m.cell_centers()
    ax = np.abs(xs)[None, :]
    ay = np.abs(ys)[:, None]
    deck = (ax <= 14) & (ay <= 4)
    clear = (ax <= 18) & (ay <= 8) & ~deck
    outside = ~((ax <= 18) & (ay <= 8))
    assert np.all(m.values[clear] == 0)
    assert np.all(m.values[outside] == 3.0)
    row = m.values[32]
    assert np.allclose(row[np.abs(xs) <= 14], arc_height(xs[np.abs(xs) <= 14], 28, 3))
    # apex within the sampling error of a half-pitch offset
    assert 3.0 - m.values.max() <= 3.0 - arc_height(0.25, 28, 3) + 1e-12


def test_bridge_map_exact_mirror_symmetry():
    m = arc_bridge_height_map(BridgeSpec(20, 2.5, 6, 3), 3.0, 0.25, (80, 120)).values
    assert np.array_equal(m, m[::-1, :])
    assert np.array_equal(m, m[:, ::-1])


def test_bridge_errors():
    with pytest.raises(TargetExceedsResistError):
        arc_bridge_height_map(BridgeSpec(28, 3, 8, 4), 2.0, 0.5)
    with pytest.raises(InvalidGeometryError):
        BridgeSpec(4, 3, 8, 4)
    with pytest.raises(InvalidGeometryError):
        arc_bridge_height_map(DEFAULT_BRIDGE, 3.0, 2.0)
    with pytest.raises(InvalidGeometryError):
        arc_bridge_height_map(DEFAULT_BRIDGE, 3.0, 0.5, (10, 10))


def test_default_field_has_unexposed_border():
    m = arc_bridge_height_map(DEFAULT_BRIDGE, 3.0, 0.5)
    v = m.values
    assert np.all(v[0] == 3) and np.all(v[-1] == 3) and np.all(v[:, 0] == 3)
    assert np.all((v >= 0) & (v <= 3))


def test_compose_behaviour():
    base = uniform_map((20, 30), 0.5, 3.0)
    patch = arc_bridge_height_map(BridgeSpec(8, 2, 2, 1), 3.0, 0.5, (8, 20))
    out = compose(base, patch, (2.0, 3.0))
    # lower-left at (2, 3) um -> columns 4..23, rows counted from the bottom 6..13
    assert np.array_equal(out.values[20 - 14:20 - 6, 4:24], patch.values)
    assert np.all(out.values[:, :4] == 3.0)
    assert np.array_equal(compose(patch, patch, patch.origin).values, patch.values)
    z = HeightMap(np.zeros((4, 4)), 0.5)
    twice = compose(compose(base, z, (0.0, 0.0)), z, (1.0, 0.0))
    assert np.all(twice.values[-4:, 0:6] == 0)


def test_compose_errors():
    base = uniform_map((10, 10), 0.5, 3.0)
    with pytest.raises(IncompatibleGridError):
        compose(base, uniform_map((2, 2), 1.0, 0.0))
    with pytest.raises(InvalidGeometryError):
        compose(base, uniform_map((4, 4), 0.5, 0.0), (4.0, 0.0))
    with pytest.raises(InvalidGeometryError):
        compose(base, uniform_map((4, 4), 0.5, 0.0), (0.3, 0.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compose_commutative_and_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (HeightMap(rng.uniform(0, 3, (6, 7)), 0.5) for _ in range(3))
    assert np.array_equal(compose(a, b).values, compose(b, a).values)
    assert np.array_equal(compose(compose(a, b), c).values, compose(a, compose(b, c)).values)


def test_grid_format_layout():
    g = HeightMap(np.array([[1.0, 2.0, 3.0], [0.5, 0.25, 1 / 3]]), 0.5)
    text = format_grid(g)
    lines = text.splitlines()
    assert lines[0] == "gslgrid 1"
    assert lines[1] == "3 2 0.5 height um"
    assert lines[2] == "1 2 3"
    assert lines[3] == "0.5 0.25 0.3333333333333333"


@pytest.mark.parametrize("cls", [HeightMap, DoseMap, EnergyMap])
def test_grid_round_trip(tmp_path, cls):
    rng = np.random.default_rng(3)
    g = cls(rng.uniform(0, 1000, (17, 23)), 0.37)
    write_grid(g, tmp_path / "a.grid")
    back = read_grid(tmp_path / "a.grid")
    assert type(back) is cls and back.pitch == g.pitch
    assert np.allclose(back.values, g.values, rtol=1e-8, atol=0)
    write_grid(back, tmp_path / "b.grid")
    assert (tmp_path / "a.grid").read_bytes() == (tmp_path / "b.grid").read_bytes()


@pytest.mark.parametrize("text,line", [
    ("gslgrid 2\n1 1 1 height um\n0\n", 1),
    ("gslgrid 1\n1 1 1 volume um\n0\n", 2),
    ("gslgrid 1\n2 1 1 height um\n0\n", 3),
    ("gslgrid 1\n1 1 1 dose um\n0\n", 2),
    ("gslgrid 1\n1 1 1 height um\nz\n", 3),
])
def test_grid_parse_errors(tmp_path, text, line):
    p = tmp_path / "bad.grid"
    p.write_text(text)
    with pytest.raises(ParseError) as exc:
        read_grid(p)
    assert exc.value.lineno == line
