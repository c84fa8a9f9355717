import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poissonconc import (
    HomogeneousBox,
    HomogeneousTorus,
    InvalidArgumentError,
    PointConfiguration,
    RadialDensity,
    Window,
    edge_count_mean,
    load_model,
    model_from_dict,
    save_model,
)
from poissonconc.errors import ConfigurationError, DivergentMeanError, UnsupportedGeometryError
from poissonconc.integrate import ball_box_integral, radial_integral, unit_ball_volume, unit_sphere_area
from poissonconc.model import ball_mass


def test_window_validation():
    with pytest.raises(InvalidArgumentError):
        Window((0.0, 0.0), (1.0, 0.0))
    w = Window.unit(3)
    assert w.dimension == 3 and w.volume == 1.0


def test_torus_displacement_wraps(unit_torus):
    d = unit_torus.displacement(np.array([0.95, 0.5]), np.array([0.05, 0.5]))
    assert np.allclose(np.abs(d), [0.1, 0.0])


def test_configuration_invariants():
    with pytest.raises(InvalidArgumentError):
        PointConfiguration(np.array([[0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        PointConfiguration(np.array([[np.nan, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        PointConfiguration(np.array([[0.0, 0.0]]), [0])
    c = PointConfiguration(np.array([[0.0, 0.0], [1.0, 1.0]]), [2, 1])
    assert c.total == 3 and not c.is_simple
    assert c.remove([0.0, 0.0]).multiplicity([0.0, 0.0]) == 1
    assert c.add([1.0, 1.0]).multiplicity([1.0, 1.0]) == 2
    assert c.add([2.0, 2.0]).n_atoms == 3
    assert len(c.expanded()) == 3


def test_from_points_merges_duplicates():
    c = PointConfiguration.from_points([[0.1, 0.2], [0.1, 0.2], [0.3, 0.3]])
    assert c.total == 3 and c.n_atoms == 2 and sorted(c.multiplicities) == [1, 2]


def test_torus_ball_mass_closed_form(torus100):
    assert torus100.ball_mass([0.3, 0.7], 0.1) == pytest.approx(math.pi, rel=1e-14)


def test_torus_ball_mass_monte_carlo_volume(torus100):
    rng = np.random.default_rng(3)
    u = rng.random((400_000, 2))
    d = u - 0.5
    frac = np.mean(np.hypot(d[:, 0], d[:, 1]) <= 0.1)
    se = math.sqrt(frac * (1 - frac) / len(u))
    assert abs(100 * frac - torus100.ball_mass([0.5, 0.5], 0.1)) <= 4 * 100 * se


def test_torus_ball_mass_center_invariant(torus100):
    rng = np.random.default_rng(0)
    vals = [torus100.ball_mass(c, 0.2) for c in rng.uniform(-3, 3, (20, 2))]
    assert np.ptp(vals) <= 1e-12


def test_torus_rejects_large_radius(torus100):
    with pytest.raises(UnsupportedGeometryError):
        torus100.ball_mass([0, 0], 0.6)


def test_ball_mass_bad_radius(torus100):
    with pytest.raises(InvalidArgumentError):
        torus100.ball_mass([0, 0], 0.0)


def test_box_quarter_disk():
    m = HomogeneousBox(1.0, Window.unit(2))
    assert ball_mass(m, [0.0, 0.0], 0.1) == pytest.approx(math.pi * 0.01 / 4, rel=1e-8)


def test_box_ball_mass_against_grid_oracle():
    m = HomogeneousBox(2.0, Window.unit(2))
    c, r = np.array([0.93, 0.4]), 0.15
    n = 4000
    g = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    oracle = 2.0 * np.mean((X - c[0]) ** 2 + (Y - c[1]) ** 2 <= r * r)
    assert m.ball_mass(c, r) == pytest.approx(oracle, rel=2e-4)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 1), r=st.floats(0.01, 0.5))
def test_box_ball_mass_bounds_and_monotone(x, y, r):
    m = HomogeneousBox(3.0, Window.unit(2))
    a, b = m.ball_mass([x, y], r), m.ball_mass([x, y], 1.1 * r)
    assert 0 <= a <= b + 1e-12
    assert b <= m.total_mass() + 1e-12


def test_ball_mass_vanishes_with_radius(box100, torus100):
    for m in (box100, torus100):
        assert m.ball_mass([0.5, 0.5], 1e-6) < 1e-8


def test_radial_density_ball_mass_monotone():
    m = RadialDensity(5.0, Window.centered(4.0), exponent=2.0)
    vals = [m.ball_mass([0.5, -0.2], r) for r in (0.1, 0.5, 1.0, 2.0, 10.0)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(m.total_mass(), rel=1e-5)


def test_radial_total_mass_matches_radial_oracle():
    # the disk of radius 4 lies in the window, so its mass is 2 pi int_0^4 s (1 + s)^-2 ds
    m = RadialDensity(5.0, Window.centered(10.0), exponent=2.0)
    exact = 5.0 * 2 * math.pi * (math.log(5.0) + 1 / 5.0 - 1.0)
    assert m.ball_mass([0.0, 0.0], 4.0) == pytest.approx(exact, rel=1e-6)


def test_edge_count_mean_torus(torus100):
    assert edge_count_mean(torus100, 0.1) == pytest.approx(50 * math.pi, rel=1e-12)


def test_edge_count_mean_box_closed_form(box100):
    # boundary loss for a square of side L: 1/2 t^2 (pi L^2 r^2 - 8 L r^3 / 3 + r^4 / 2)
    t, r = 100.0, 0.1
    exact = 0.5 * t * t * (math.pi * r * r - 8 * r ** 3 / 3 + r ** 4 / 2)
    val = edge_count_mean(box100, r)
    assert val == pytest.approx(exact, rel=1e-6)
    assert val < 50 * math.pi


def test_edge_count_mean_zero_rate(unit_torus):
    assert edge_count_mean(HomogeneousTorus(0.0, unit_torus), 0.1) == 0.0
    assert edge_count_mean(HomogeneousBox(0.0, Window.unit(2)), 0.1) == 0.0


def test_edge_count_mean_divergence_guard():
    m = HomogeneousBox(1e160, Window.unit(2))
    with pytest.raises(DivergentMeanError):
        edge_count_mean(m, 0.1)


def test_model_roundtrip(tmp_path):
    models = [
        HomogeneousBox(3.0, Window((0, 0), (2, 1))),
        HomogeneousTorus(7.5, Window.unit(3, periodic=True)),
        RadialDensity(2.0, Window.centered(3.0), exponent=1.5),
    ]
    for i, m in enumerate(models):
        p = tmp_path / f"m{i}.json"
        save_model(m, p)
        assert load_model(p) == m
        assert model_from_dict(json.loads(p.read_text())) == m


def test_model_from_dict_unknown_variant():
    with pytest.raises(ConfigurationError):
        model_from_dict({"variant": "nope", "rate": 1, "window": {"lower": [0], "upper": [1]}})


def test_radial_neglected_mass_bound():
    m = RadialDensity(1.0, Window.centered(50.0), exponent=3.0)
    b = m.neglected_mass_bound()
    # tail of 2 pi int_50^inf s (1+s)^-3 ds over the inscribed disk complement
    assert 0 < b <= 2 * math.pi * (1 / 51 - 1 / (2 * 51 ** 2)) + 1e-12


def test_unit_ball_and_sphere():
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert unit_sphere_area(2) == pytest.approx(2 * math.pi)


def test_ball_box_integral_full_ball():
    val = ball_box_integral(np.zeros(3), 0.5, np.full(3, -1.0), np.full(3, 1.0))
    assert val == pytest.approx(4 * math.pi / 3 * 0.125, rel=1e-8)


def test_radial_integral_finite_value():
    val = radial_integral(lambda s: (1 + s) ** -2.7, 2)
    assert val == pytest.approx(2 * math.pi / (1.7 * 0.7), rel=1e-7)
