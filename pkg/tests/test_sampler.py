import math

import numpy as np
import pytest

from poissonconc import (
    HomogeneousBox,
    HomogeneousTorus,
    InvalidArgumentError,
    PointConfiguration,
    RadialDensity,
    SeedSpec,
    Window,
    edge_count_mean,
    mecke_check,
    sample,
)
from poissonconc.errors import EnvelopeTooLooseError
from poissonconc.graph import DiskGraph, build_graph, edge_count
from poissonconc.sampler import sample_counts


def counts(model, reps, seed=0):
    return np.array([sample(model, SeedSpec(seed, k)).total for k in range(reps)])


def test_seedspec_validation():
    with pytest.raises(InvalidArgumentError):
        SeedSpec(-1)
    with pytest.raises(InvalidArgumentError):
        SeedSpec(2 ** 64)
    with pytest.raises(InvalidArgumentError):
        SeedSpec(0, -1)


def test_zero_rate_gives_empty():
    cfg = sample(HomogeneousBox(0.0, Window.unit(2)), SeedSpec(1, 0))
    assert cfg.total == 0 and cfg.dimension == 2


def test_determinism(torus100):
    a = sample(torus100, SeedSpec(12345, 7))
    b = sample(torus100, SeedSpec(12345, 7))
    assert np.array_equal(a.points, b.points)
    c = sample(torus100, SeedSpec(12345, 8))
    assert not (a.total == c.total and np.array_equal(a.points, c.points))


def test_substream_independent_of_order(torus100):
    direct = sample(torus100, SeedSpec(5, 3))
    seq = dict(sample_counts(torus100, 5, 5))
    assert np.array_equal(seq[3].points, direct.points)


def test_samples_simple_and_inside():
    m = RadialDensity(30.0, Window.centered(2.0), exponent=2.0)
    cfg = sample(m, SeedSpec(2, 0))
    assert cfg.is_simple
    assert np.all(m.window.contains(cfg.points))


def test_torus_mean_count(unit_torus):
    c = counts(HomogeneousTorus(50.0, unit_torus), 10_000, seed=2024)
    assert abs(c.mean() - 50) <= 3 * math.sqrt(50 / 10_000)


def test_box_count_variance():
    c = counts(HomogeneousBox(50.0, Window.unit(2)), 10_000, seed=1)
    s2 = c.var(ddof=1)
    m4 = np.mean((c - c.mean()) ** 4)
    se = math.sqrt((m4 - s2 * s2) / len(c))
    assert abs(s2 - 50) <= 3 * se


def test_disjoint_regions_uncorrelated():
    m = HomogeneousBox(40.0, Window.unit(2))
    a = np.empty(10_000)
    b = np.empty(10_000)
    for k in range(10_000):
        p = sample(m, SeedSpec(2024, k)).points
        a[k] = np.sum(p[:, 0] < 0.4)
        b[k] = np.sum(p[:, 0] > 0.6)
    prod = (a - a.mean()) * (b - b.mean())
    assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / math.sqrt(len(a))


def test_radial_sampling_distribution():
    # radial density (|x| + 1)^-2 on a disk-containing window: check the mass inside |x| <= 1
    m = RadialDensity(20.0, Window.centered(3.0), exponent=2.0)
    inner = []
    for k in range(3000):
        p = sample(m, SeedSpec(4, k)).points
        inner.append(np.sum(np.linalg.norm(p, axis=1) <= 1.0))
    inner = np.array(inner)
    expect = m.ball_mass([0.0, 0.0], 1.0)
    assert abs(inner.mean() - expect) <= 3 * math.sqrt(expect / len(inner))


def test_envelope_too_loose():
    m = RadialDensity(1000.0, Window.centered(1000.0), exponent=10.0)
    with pytest.raises(EnvelopeTooLooseError):
        sample(m, SeedSpec(0, 0))


@pytest.mark.parametrize("functional", ["one", "count_minus_one", "neighbors"])
def test_mecke_named(functional, torus100):
    model = torus100 if functional == "neighbors" else HomogeneousTorus(20.0, Window.unit(2, periodic=True))
    rep = mecke_check(model, functional, replications=2000, seed=SeedSpec(11, 0), rho=0.1)
    assert rep.rhs_exact and rep.passed


def test_mecke_closed_form_values(torus100):
    rep = mecke_check(torus100, "neighbors", replications=50, seed=0, rho=0.1)
    assert rep.rhs_value == pytest.approx(100 * math.pi)
    rep = mecke_check(HomogeneousTorus(7.0, Window.unit(2, periodic=True)), "count_minus_one", replications=50)
    assert rep.rhs_value == pytest.approx(49.0)


def test_mecke_nested_callable():
    m = HomogeneousBox(15.0, Window.unit(2))

    def left_count(x, cfg):
        # number of points of cfg with first coordinate below x
        return float(np.sum(cfg.expanded()[:, 0] < x[0]))

    rep = mecke_check(m, left_count, replications=3000, seed=2)
    assert not rep.rhs_exact and rep.passed


def test_slivnyak_mecke_order_two(torus100):
    vals = np.array([
        2 * edge_count(build_graph(sample(torus100, SeedSpec(9, k)), DiskGraph(0.1), torus100.window))
        for k in range(3000)
    ])
    target = 2 * edge_count_mean(torus100, 0.1)
    assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_substream_means_are_standard_normal():
    # calibration of the 3 SE checks: z-scores of the count mean across master seeds
    z = []
    for seed in range(40):
        c = np.array([SeedSpec(seed, k).generator().poisson(50.0) for k in range(2000)])
        z.append((c.mean() - 50) / math.sqrt(50 / 2000))
    z = np.array(z)
    assert abs(z.mean()) < 3 / math.sqrt(len(z))
    assert 0.6 < z.std(ddof=1) < 1.4


def test_supports_empty_configuration_type():
    assert PointConfiguration.empty(3).total == 0
