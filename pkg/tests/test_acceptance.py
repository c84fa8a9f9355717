"""Acceptance criteria 1 to 10, each at its stated size and tolerance."""

import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, brute_edges
from poissonconc import (
    ConvexDistanceProblem,
    EdgeIndicator,
    HomogeneousTorus,
    LengthPower,
    PointConfiguration,
    SeedSpec,
    ThresholdEvent,
    VariableRadiusLength,
    Window,
    add_one_cost,
    convex_distance,
    deficiency_set,
    edge_count_mean,
    evaluate,
    mecke_check,
    rate_asymptotics,
    sample,
    variance_decomposition,
)
from poissonconc import bounds as B
from poissonconc.convex import check_dt_properties, isoperimetric_check, simplex_grid_oracle
from poissonconc.graph import DiskGraph, build_graph, check_edge_inequalities, edge_count, triangle_count
from poissonconc.harness import (
    ExperimentSpec,
    run_clt_consistency,
    run_infinite_edges_experiment,
    run_tail_experiment,
    sample_functional,
)
from poissonconc.stats import mean_and_se, variance_and_se

WORKERS = max(1, min(4, os.cpu_count() or 1))


def report(num, title, ok, detail=""):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _random_simple(rng, n):
    if rng.random() < 0.5:
        return rng.random((n, 2))
    centers = rng.random((int(rng.integers(1, 6)), 2))
    pts = centers[rng.integers(0, len(centers), n)] + rng.normal(0, 0.05, (n, 2))
    return np.unique(pts, axis=0)


def test_criterion_1_geometric_inequalities():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    for k in range(1000):
        n = int(rng.integers(1, 301))
        rho = float(rng.uniform(0.05, 0.3))
        cfg = PointConfiguration(_random_simple(rng, n))
        rep = check_edge_inequalities(build_graph(cfg, DiskGraph(rho)), 3, n_directions=100, seed=k)
        bad += not rep.ok
    elapsed = time.perf_counter() - t0
    ok = report(1, "edge inequalities on 1000 configurations", bad == 0 and elapsed < 30,
                f"violations={bad}, {elapsed:.1f}s")
    assert ok


def _brute_triangles(points, rho):
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    A = ((d > 0) & (d <= rho)).astype(np.int64)
    return int(np.trace(A @ A @ A)) // 6


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    mismatches = 0
    torus = Window.unit(2, periodic=True)
    for k in range(200):
        n = int(rng.integers(2, 151))
        rho = float(rng.uniform(0.05, 0.3))
        pts = rng.random((n, 2))
        periodic = k % 2 == 1
        g = build_graph(PointConfiguration(pts), DiskGraph(rho), torus if periodic else None)
        got = {tuple(e) for e in g.edges.tolist()}
        if got != brute_edges(pts, rho, periodic) or edge_count(g) != len(got):
            mismatches += 1
        if not periodic and triangle_count(g) != _brute_triangles(pts, rho):
            mismatches += 1
    from test_convex import random_instance

    n_cd, worst = 0, 0.0
    while n_cd < 120:
        prob = random_instance(rng)
        if len(deficiency_set(prob, prune=False)) > 3:
            continue
        worst = max(worst, abs(convex_distance(prob).value - simplex_grid_oracle(prob)))
        n_cd += 1
    elapsed = time.perf_counter() - t0
    ok = report(2, "graph and convex distance oracles",
                mismatches == 0 and worst <= 1e-6 and elapsed < 60,
                f"graph mismatches={mismatches}, convex max err={worst:.1e}, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def torus_edge_values(torus100):
    t0 = time.perf_counter()
    vals = sample_functional(torus100, {"name": "edge_count", "rho": 0.1}, 20240, 10 ** 5, WORKERS)
    return vals, time.perf_counter() - t0


@pytest.fixture(scope="module")
def torus100():
    return HomogeneousTorus(100.0, Window.unit(2, periodic=True))


def test_criterion_3_moments(torus_edge_values, torus100):
    vals, elapsed = torus_edge_values
    dec = variance_decomposition(EdgeIndicator(0.1, torus100.window), torus100)
    m, se_m = mean_and_se(vals)
    v, se_v = variance_and_se(vals)
    mean_ok = abs(m - 157.0796) <= 3 * se_m and abs(edge_count_mean(torus100, 0.1) - 157.0796) < 1e-4
    var_ok = abs(v - 1144.04) <= 3 * se_v and abs(dec.variance - 1144.04) < 0.01
    v_ok = abs(dec.V - 325.28) < 0.01 and dec.V <= dec.variance / 2 and dec.V <= v / 2
    ok = report(3, "torus edge-count moments", mean_ok and var_ok and v_ok and elapsed < 300,
                f"mean={m:.3f}+-{se_m:.3f}, var={v:.1f}+-{se_v:.1f}, V={dec.V:.2f}, {elapsed:.0f}s")
    assert ok


def test_criterion_4_tail_certification(torus_edge_values, torus100):
    vals, elapsed = torus_edge_values
    t0 = time.perf_counter()
    f = {"name": "edge_count", "rho": 0.1}
    grid = [25.0, 50.0, 100.0, 200.0]
    up = ExperimentSpec("edge_upper", torus100, f,
                        {"curve": "edge_upper_tail", "params": {"c_geom": 12.29620, "EN": "auto"}},
                        10 ** 5, grid, seed=20240)
    lo = ExperimentSpec("edge_lower", torus100, f,
                        {"curve": "edge_lower_tail", "params": {"v_frak": 1301.12}},
                        10 ** 5, grid, seed=20240)
    r_up = run_tail_experiment(up, values=vals)
    r_lo = run_tail_experiment(lo, values=vals)
    resolved_fail = sum(not row.passed for row in r_up.rows + r_lo.rows if row.resolved)
    elapsed += time.perf_counter() - t0
    ok = report(4, "edge tail bounds dominate the empirical tails", resolved_fail == 0 and elapsed < 600,
                f"resolved failures={resolved_fail}, min slack up={r_up.min_slack:.2e} "
                f"lo={r_lo.min_slack:.2e}")
    assert ok


def test_criterion_5_chi_inequality():
    t0 = time.perf_counter()
    z = np.geomspace(1e-3, 1e3, 1000)
    slack = np.array([B.herbst_sup(v) for v in z]) - B.chi(z)
    elapsed = time.perf_counter() - t0
    ok = report(5, "chi below the Herbst supremum", bool(np.all(slack >= 0)) and elapsed < 5,
                f"min slack={slack.min():.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_6_convex_distance_structure():
    t0 = time.perf_counter()
    model = HomogeneousTorus(10.0, Window.unit(2, periodic=True))
    rng = np.random.default_rng(6)
    failed = 0
    for k in range(200):
        xi = sample(model, SeedSpec(6, k))
        m = int(rng.integers(0, max(xi.total, 1)))
        window = None if k % 3 else Window((0.0, 0.0), (0.5, 1.0))
        rep = check_dt_properties(ConvexDistanceProblem(xi, ThresholdEvent(m, window)),
                                  seed=k, raise_on_failure=False)
        failed += not rep.passed
    iso = [isoperimetric_check(model, ThresholdEvent(m), replications=10 ** 4, seed=60 + m)
           for m in (8, 10, 12)]
    worst = max(r.product_upper_CI for r in iso)
    elapsed = time.perf_counter() - t0
    ok = report(6, "convex distance properties and isoperimetry",
                failed == 0 and worst <= 1.02 and elapsed < 600,
                f"property failures={failed}, max product UCB={worst:.3f}, {elapsed:.0f}s")
    assert ok


def test_criterion_7_difference_operator():
    rng = np.random.default_rng(7)
    kernels = [EdgeIndicator(0.15), LengthPower(0.2, 0.7), VariableRadiusLength(0.9)]
    worst, neg = 0.0, 0
    for k in range(500):
        ker = kernels[k % 3]
        n = int(rng.integers(0, 80))
        cfg = PointConfiguration.from_points(rng.uniform(-1, 1, (n, 2)), 2)
        x, z = rng.uniform(-1, 1, (2, 2))
        base = evaluate(ker, cfg)
        direct = evaluate(ker, cfg.add(x)) - base
        worst = max(worst, abs(add_one_cost(ker, cfg, x) - direct) / max(1.0, abs(direct)))
        dd = evaluate(ker, cfg.add(x).add(z)) - evaluate(ker, cfg.add(z)) - direct
        neg += dd < -1e-12
    ok = report(7, "add-one cost identity and second differences", worst <= 1e-12 and neg == 0,
                f"max rel err={worst:.1e}, negative second differences={neg}")
    assert ok


def test_criterion_8_mecke():
    model = HomogeneousTorus(100.0, Window.unit(2, periodic=True))
    reps = [mecke_check(model, f, replications=10 ** 4, seed=8) for f in ("one", "count_minus_one", "neighbors")]
    detail = ", ".join(f"{r.functional} z={(r.lhs_estimate - r.rhs_value) / r.standard_error:+.2f}" for r in reps)
    ok = report(8, "Mecke formula checks", all(r.passed for r in reps), detail)
    assert ok


UPPER_CURVES = {
    "upper_tail_Vbeta": dict(c=2.0, beta=0.5),
    "upper_tail_Vbeta_weak": dict(c=2.0, beta=0.5),
    "upper_tail_selfbound": dict(c=2.0, alpha=1.5, EF=100.0),
    "upper_tail_linear": dict(a=1.0, b=1.0, EF=100.0),
    "edge_upper_tail": dict(c_geom=12.296164071504347, EN=157.0796),
    "ustat_upper_tail": dict(EG=5.0, EF=100.0, c=1.0),
    "length_power_upper_tail": dict(EG=5.0, EL=100.0, d=2, rho=0.1, alpha=1.0),
    "variable_radius_upper_tail": dict(EG=5.0, EL=100.0, gamma=0.9),
    "trivial": {},
}


def test_criterion_9_rate_asymptotics_and_clt():
    # every registered curve that is not a lower tail gets checked
    assert set(UPPER_CURVES) == {n for n in B.CURVES if "lower" not in n}
    reps = [rate_asymptotics(B.make_curve(n, **p)) for n, p in UPPER_CURVES.items()]
    assert all(B.make_curve(n, **p).tail == "upper" for n, p in UPPER_CURVES.items())
    checked = [r for r in reps if r.checked]
    clt = run_clt_consistency(HomogeneousTorus(1.0, Window.unit(2, periodic=True)), 0.1,
                              n_list=(1e2, 1e3, 1e4))
    detail = ", ".join(f"{r.curve}={r.limsup_estimate:.3f}" for r in checked)
    ok = report(9, "rate ceiling and CLT consistency",
                all(r.passed for r in reps) and len(checked) > 0 and clt.increasing,
                f"{detail}; x_n={[round(x, 2) for x in clt.x_n]}")
    assert ok


def test_criterion_10_infinite_edges():
    t0 = time.perf_counter()
    rep = run_infinite_edges_experiment(gamma=0.9, d=2, R_list=(2, 4, 8, 16), replications=1000,
                                        rate=5.0, seed=10)
    elapsed = time.perf_counter() - t0
    ok = report(10, "decaying-radius graph regime",
                rep.edges_diverge and rep.length_converges and elapsed < 600,
                f"edge increment={rep.edge_last_increment_fraction:.3f}, "
                f"length increment={rep.length_last_increment_fraction:.3f}, {elapsed:.0f}s")
    assert ok
