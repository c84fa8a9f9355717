import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from poissonconc import (
    ConvexDistanceProblem,
    DegenerateEventError,
    HomogeneousTorus,
    InvalidArgumentError,
    PointConfiguration,
    PropertyViolationError,
    ThresholdEvent,
    Window,
    convex_distance,
    deficiency_set,
)
from poissonconc import convex as C
from poissonconc.convex import check_dt_properties, isoperimetric_check, simplex_grid_oracle

DeficiencyProfile = C.DeficiencyProfile
X2 = PointConfiguration(np.array([[0.1, 0.1], [0.7, 0.4]]))


def delta(p):
    return PointConfiguration(np.atleast_2d(np.asarray(p, dtype=float)))


def slsqp_oracle(xi, Q):
    """Independent oracle: generic constrained minimisation over mixture weights."""
    w = xi.multiplicities.astype(float)
    Q = np.asarray(Q, dtype=float)
    best = math.inf
    for start in np.eye(len(Q)).tolist() + [[1.0 / len(Q)] * len(Q)]:
        res = optimize.minimize(lambda z: float(np.sum((z @ Q) ** 2 / w)), start, method="SLSQP",
                                bounds=[(0, 1)] * len(Q),
                                constraints=[{"type": "eq", "fun": lambda z: z.sum() - 1}],
                                options={"ftol": 1e-15, "maxiter": 500})
        best = min(best, res.fun)
    return math.sqrt(max(best, 0.0))


def random_instance(rng, max_atoms=4, max_mult=3, n_event=3):
    n = int(rng.integers(1, max_atoms + 1))
    pts = rng.random((n, 2))
    mult = rng.integers(1, max_mult + 1, n)
    xi = PointConfiguration(pts, mult)
    event = []
    for _ in range(int(rng.integers(1, n_event + 1))):
        keep = rng.integers(0, mult + 1)
        sel = keep > 0
        parts = [PointConfiguration(pts[sel], keep[sel])] if sel.any() else [PointConfiguration.empty(2)]
        if rng.random() < 0.3:
            parts.append(delta(rng.random(2) + 2.0))
        nu = parts[0]
        for extra in parts[1:]:
            nu = nu.add(extra.points[0])
        event.append(nu)
    return ConvexDistanceProblem(xi, event)


def test_threshold_event_basics():
    w = Window((0.0, 0.0), (0.5, 1.0))
    ev = ThresholdEvent(1, w)
    xi = PointConfiguration(np.array([[0.1, 0.1], [0.2, 0.5], [0.9, 0.9]]), [1, 2, 1])
    assert ev.count(xi) == 3 and ev.removals(xi) == 2 and not ev.contains(xi)
    assert ThresholdEvent(5).contains(xi)
    with pytest.raises(InvalidArgumentError):
        ThresholdEvent(-1)


def test_empty_event_rejected():
    with pytest.raises(InvalidArgumentError):
        ConvexDistanceProblem(X2, [])


def test_mixed_dimensions_rejected():
    with pytest.raises(InvalidArgumentError):
        ConvexDistanceProblem(X2, [PointConfiguration(np.zeros((1, 3)))])


def test_deficiency_examples():
    q = deficiency_set(ConvexDistanceProblem(X2, [X2, delta([0.1, 0.1])]), prune=False)
    assert DeficiencyProfile((0, 0)) in q
    q = deficiency_set(ConvexDistanceProblem(X2, [delta([0.1, 0.1]), delta([0.7, 0.4])]))
    assert sorted(p.values for p in q) == [(0, 1), (1, 0)]
    xi4 = PointConfiguration(np.random.default_rng(0).random((4, 2)))
    q = deficiency_set(ConvexDistanceProblem(xi4, ThresholdEvent(2)))
    assert len(q) == 6 and all(sum(p.values) == 2 and max(p.values) == 1 for p in q)


def test_threshold_profiles_with_multiplicities():
    xi = PointConfiguration(np.array([[0.0, 0.0], [1.0, 0.0]]), [2, 3])
    q = deficiency_set(ConvexDistanceProblem(xi, ThresholdEvent(2)))
    # remove 3 of 5 units: (0,3), (1,2), (2,1)
    assert sorted(p.values for p in q) == [(0, 3), (1, 2), (2, 1)]


def test_pruning_removes_dominated():
    xi = PointConfiguration(np.array([[0.0, 0.0], [1.0, 0.0]]))
    ev = [PointConfiguration.empty(2), delta([0.0, 0.0])]
    full = deficiency_set(ConvexDistanceProblem(xi, ev), prune=False)
    pruned = deficiency_set(ConvexDistanceProblem(xi, ev), prune=True)
    assert len(full) == 2 and [p.values for p in pruned] == [(0, 1)]


def test_distance_examples():
    assert convex_distance(ConvexDistanceProblem(X2, [X2])).value == 0.0
    r = convex_distance(ConvexDistanceProblem(X2, [PointConfiguration.empty(2)]))
    assert r.value == pytest.approx(math.sqrt(2), abs=1e-9)
    r = convex_distance(ConvexDistanceProblem(X2, [delta([0.1, 0.1]), delta([0.7, 0.4])]))
    assert r.value == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    weights = sorted(wt for _, wt in r.optimal_mixture)
    assert weights == pytest.approx([0.5, 0.5], abs=1e-4)


def test_zero_iff_zero_profile():
    rng = np.random.default_rng(4)
    for _ in range(50):
        prob = random_instance(rng)
        has_zero = any(all(v == 0 for v in p.values) for p in deficiency_set(prob, prune=False))
        val = convex_distance(prob).value
        assert (val == 0.0) == has_zero


def test_solver_matches_grid_oracle_many_instances():
    rng = np.random.default_rng(2024)
    count = 0
    while count < 120:
        prob = random_instance(rng)
        if len(deficiency_set(prob, prune=False)) > 3:
            continue
        assert convex_distance(prob).value == pytest.approx(simplex_grid_oracle(prob), abs=1e-6)
        count += 1


def test_solver_matches_slsqp_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        prob = random_instance(rng, max_atoms=6, n_event=6)
        Q = [p.values for p in deficiency_set(prob, prune=False)]
        assert convex_distance(prob).value == pytest.approx(slsqp_oracle(prob.xi, Q), abs=1e-6)


def test_pruning_never_changes_value():
    rng = np.random.default_rng(8)
    for _ in range(60):
        prob = random_instance(rng, n_event=4)
        full = [p.values for p in deficiency_set(prob, prune=False)]
        pruned = [p.values for p in deficiency_set(prob, prune=True)]
        assert slsqp_oracle(prob.xi, full) == pytest.approx(slsqp_oracle(prob.xi, pruned), abs=1e-7)
        assert convex_distance(prob).value == pytest.approx(slsqp_oracle(prob.xi, full), abs=1e-6)


def test_minimax_sandwich():
    rng = np.random.default_rng(9)
    tol = 1e-9
    for _ in range(60):
        prob = random_instance(rng, max_atoms=5, n_event=5)
        r = convex_distance(prob, tol)
        if r.value == 0:
            continue
        w = prob.xi.multiplicities.astype(float)
        u = r.optimal_u
        assert np.sum(w * u * u) == pytest.approx(1.0, abs=1e-9)
        Q = np.array([p.values for p in deficiency_set(prob, prune=False)], dtype=float)
        sup_form = float(np.min(Q @ u))
        assert sup_form >= r.value - 2 * tol * max(1.0, r.value) - 1e-12
        assert r.lower_bound == pytest.approx(sup_form, abs=1e-12)
        h = sum(wt * np.array(p.values, float) for p, wt in r.optimal_mixture)
        assert math.sqrt(np.sum(h * h / w)) <= r.value + 1e-12


@pytest.mark.parametrize("mult,m", [((1, 1, 1, 1), 2), ((2, 1, 3), 2), ((1, 2, 2, 1, 3), 4), ((4,), 1)])
def test_threshold_closed_form_matches_enumeration(mult, m):
    pts = np.random.default_rng(len(mult)).random((len(mult), 2))
    xi = PointConfiguration(pts, list(mult))
    prob = ConvexDistanceProblem(xi, ThresholdEvent(m))
    exact = convex_distance(prob, method="auto")
    fw = convex_distance(prob, method="frank_wolfe")
    Q = [p.values for p in deficiency_set(prob)]
    k = xi.total - m
    assert exact.value == pytest.approx(k / math.sqrt(xi.total), rel=1e-12)
    assert fw.value == pytest.approx(exact.value, abs=1e-8)
    assert slsqp_oracle(xi, Q) == pytest.approx(exact.value, abs=1e-6)
    assert exact.lower_bound == pytest.approx(exact.value, rel=1e-12)


def test_threshold_window_only_counts_inside():
    w = Window((0.0, 0.0), (0.5, 1.0))
    xi = PointConfiguration(np.array([[0.1, 0.1], [0.2, 0.5], [0.3, 0.3], [0.9, 0.9]]))
    r = convex_distance(ConvexDistanceProblem(xi, ThresholdEvent(1, w)))
    assert r.value == pytest.approx(2 / math.sqrt(3), rel=1e-12)
    assert r.optimal_u[3] == 0.0


def test_result_as_dict():
    d = convex_distance(ConvexDistanceProblem(X2, [delta([0.1, 0.1]), delta([0.7, 0.4])])).as_dict()
    assert set(d) >= {"value", "lower_bound", "optimal_u", "optimal_mixture"}


def test_check_dt_properties_trivial_and_two_point():
    rep = check_dt_properties(ConvexDistanceProblem(X2, [X2, delta([0.1, 0.1])]))
    assert rep.passed and rep.value == 0.0
    prob = ConvexDistanceProblem(X2, [delta([0.1, 0.1]), delta([0.7, 0.4])])
    rep = check_dt_properties(prob)
    # removing either point leaves a configuration of A
    assert list(rep.removal_values) == pytest.approx([0.0, 0.0], abs=1e-9)
    assert rep.v_plus == pytest.approx(1.0, abs=1e-8) and rep.passed


def test_monotone_under_added_points():
    rng = np.random.default_rng(10)
    prob = ConvexDistanceProblem(PointConfiguration(rng.random((6, 2)), [1, 2, 1, 1, 3, 1]), ThresholdEvent(4))
    rep = check_dt_properties(prob, probes=np.vstack([rng.random((90, 2)), prob.xi.points[rng.integers(0, 6, 10)]]))
    assert rep.passed and np.all(rep.probe_values >= rep.value - 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_dt_properties_random_explicit(seed):
    prob = random_instance(np.random.default_rng(seed), max_atoms=4, n_event=3)
    rep = check_dt_properties(prob, seed=seed, n_probes=3)
    assert rep.passed
    assert rep.v_plus <= 1 + 1e-8
    assert rep.v_plus_squared <= 4 * rep.value ** 2 + 1e-8


def test_property_violation_carries_witness(monkeypatch):
    real = C.convex_distance

    def broken(problem, tolerance=1e-9, **kw):
        res = real(problem, tolerance)
        if problem.xi.total > 2:
            res.value += 5.0
        return res

    monkeypatch.setattr(C, "convex_distance", broken)
    with pytest.raises(PropertyViolationError) as info:
        check_dt_properties(ConvexDistanceProblem(X2, [PointConfiguration.empty(2)]))
    assert "points" in info.value.witness and "violation" in info.value.witness


def test_isoperimetric_small_run():
    m = HomogeneousTorus(10.0, Window.unit(2, periodic=True))
    rep = isoperimetric_check(m, ThresholdEvent(10), replications=1500, seed=3, r_grid=[0.5, 1.0, 2.0])
    assert 0 < rep.P_A_estimate < 1 and rep.passed
    assert rep.product <= rep.product_upper_CI
    for row in rep.tail_rows:
        assert row["empirical"] <= row["bound"] + 1e-12


def test_isoperimetric_degenerate():
    m = HomogeneousTorus(10.0, Window.unit(2, periodic=True))
    with pytest.raises(DegenerateEventError):
        isoperimetric_check(m, ThresholdEvent(10 ** 6), replications=50)
