"""Convex distance of a finite configuration to an event.

The distance is computed through its minimax form: with profiles
``q(x) = (xi(x) - nu(x))_+`` over ``nu`` in the event, it equals the minimum
over mixtures of profiles of ``sqrt(sum_x h(x)^2 / xi(x))`` where ``h`` is the
mixture's mean profile. That is a convex quadratic over a simplex, solved by
Frank-Wolfe with away steps; the optimal weight map is ``u = h / (xi d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import (
    ConvergenceError,
    DegenerateEventError,
    InvalidArgumentError,
    PropertyViolationError,
)
from .model import IntensityModel, PointConfiguration, Window

DEFAULT_TOLERANCE = 1e-9
MAX_ITERATIONS = 10 ** 6
MAX_ENUMERATED = 10 ** 6


@dataclass(frozen=True)
class ThresholdEvent:
    """``{nu : nu(window) <= m}``; ``window=None`` counts every point."""

    m: int
    window: Optional[Window] = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise InvalidArgumentError("threshold m must be a non-negative integer")
        object.__setattr__(self, "m", int(self.m))

    def mask(self, xi: PointConfiguration) -> np.ndarray:
        if self.window is None or xi.n_atoms == 0:
            return np.ones(xi.n_atoms, dtype=bool)
        return self.window.contains(xi.points)

    def count(self, xi: PointConfiguration) -> int:
        return int(xi.multiplicities[self.mask(xi)].sum())

    def contains(self, xi: PointConfiguration) -> bool:
        return self.count(xi) <= self.m

    def removals(self, xi: PointConfiguration) -> int:
        """Points that must be deleted from ``xi`` to enter the event."""
        return max(self.count(xi) - self.m, 0)

    def to_dict(self) -> dict:
        out = {"type": "threshold", "m": self.m}
        if self.window is not None:
            out["window"] = self.window.to_dict()
        return out


EventLike = Union[ThresholdEvent, Sequence[PointConfiguration]]


@dataclass(frozen=True)
class DeficiencyProfile:
    """Integer deficiency ``q`` on the atoms of ``xi`` (in atom order)."""

    values: Tuple[int, ...]

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.values) if v > 0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass
class ConvexDistanceProblem:
    xi: PointConfiguration
    event: EventLike

    def __post_init__(self):
        if isinstance(self.event, ThresholdEvent):
            w = self.event.window
            if w is not None and w.dimension != self.xi.dimension:
                raise InvalidArgumentError("event window dimension differs from xi")
            return
        event = list(self.event)
        if not event:
            raise InvalidArgumentError("the event A must be non-empty")
        for nu in event:
            if not isinstance(nu, PointConfiguration):
                raise InvalidArgumentError("finite events must be PointConfigurations")
            if nu.dimension != self.xi.dimension:
                raise InvalidArgumentError("all configurations must share a dimension")
        self.event = event

    @property
    def is_threshold(self) -> bool:
        return isinstance(self.event, ThresholdEvent)

    def with_xi(self, xi: PointConfiguration) -> "ConvexDistanceProblem":
        return ConvexDistanceProblem(xi, self.event)


def _deficiency(xi: PointConfiguration, nu: PointConfiguration) -> Tuple[int, ...]:
    if nu.n_atoms == 0:
        return tuple(int(m) for m in xi.multiplicities)
    lookup = {p.tobytes(): int(m) for p, m in zip(nu.points, nu.multiplicities)}
    return tuple(
        max(int(m) - lookup.get(p.tobytes(), 0), 0) for p, m in zip(xi.points, xi.multiplicities)
    )


def _prune_dominated(profiles: List[Tuple[int, ...]]) -> List[Tuple[int, ...]]:
    # q' is redundant when some other feasible q <= q' pointwise
    if not profiles:
        return profiles
    arr = np.array(profiles, dtype=np.int64)
    order = np.argsort(arr.sum(axis=1), kind="stable")
    kept: List[np.ndarray] = []
    for i in order:
        q = arr[i]
        if any(np.all(k <= q) for k in kept):
            continue
        kept.append(q)
    return [tuple(int(v) for v in k) for k in kept]


def _threshold_profiles(caps: np.ndarray, mask: np.ndarray, k: int):
    idx = np.flatnonzero(mask)
    n = caps.size

    def rec(pos, remaining, cur):
        if remaining == 0:
            yield tuple(cur)
            return
        if pos == len(idx):
            return
        i = idx[pos]
        room = int(caps[idx[pos:]].sum())
        if room < remaining:
            return
        for v in range(min(int(caps[i]), remaining), -1, -1):
            cur[i] = v
            yield from rec(pos + 1, remaining - v, cur)
        cur[i] = 0

    yield from rec(0, k, [0] * n)


def deficiency_set(problem: ConvexDistanceProblem, prune: bool = True,
                   max_profiles: int = MAX_ENUMERATED) -> List[DeficiencyProfile]:
    """The reduced set of deficiency profiles.

    Explicit events give one profile per configuration (deduplicated, and
    without dominated profiles when ``prune``). Threshold events give every
    way of deleting exactly the required number of points; this is
    combinatorial and meant for small instances, the solver never calls it.
    """
    xi = problem.xi
    if problem.is_threshold:
        ev = problem.event
        k = ev.removals(xi)
        mask = ev.mask(xi)
        out = []
        for q in _threshold_profiles(xi.multiplicities, mask, k):
            out.append(DeficiencyProfile(q))
            if len(out) > max_profiles:
                raise InvalidArgumentError("too many profiles to enumerate")
        return out
    seen = []
    known = set()
    for nu in problem.event:
        q = _deficiency(xi, nu)
        if q not in known:
            known.add(q)
            seen.append(q)
    if prune:
        seen = _prune_dominated(seen)
    return [DeficiencyProfile(q) for q in seen]


# --------------------------------------------------------------------------- solver


@dataclass
class ConvexDistanceResult:
    value: float
    lower_bound: float
    optimal_mixture: List[Tuple[DeficiencyProfile, float]]
    optimal_u: np.ndarray
    mean_profile: np.ndarray
    iterations: int
    gap: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "lower_bound": self.lower_bound,
            "iterations": self.iterations,
            "optimal_u": [float(v) for v in self.optimal_u],
            "optimal_mixture": [
                {"profile": list(p.values), "weight": float(wt)} for p, wt in self.optimal_mixture
            ],
        }


def _explicit_lmo(Q: np.ndarray):
    keys = [tuple(int(v) for v in row) for row in Q]

    def lmo(g):
        j = int(np.argmin(Q @ g))
        return keys[j], Q[j]

    return lmo


def _threshold_lmo(caps: np.ndarray, mask: np.ndarray, k: int):
    idx = np.flatnonzero(mask)
    caps = caps.astype(float)

    def lmo(g):
        # each deleted unit at atom x costs g(x); fill the cheapest atoms first
        order = idx[np.argsort(g[idx], kind="stable")]
        s = np.zeros(caps.size)
        left = k
        for i in order:
            take = min(caps[i], left)
            s[i] = take
            left -= take
            if left == 0:
                break
        return tuple(int(v) for v in s), s

    return lmo


def _frank_wolfe(w: np.ndarray, lmo: Callable, tol: float, max_iter: int):
    """Minimise ``sum h^2 / w`` over the hull of the LMO's vertices.

    Stops when the weak-duality gap on the distance itself,
    ``value - min_q <u, q>``, is at most ``tol``.
    """
    key, s = lmo(np.zeros_like(w))
    active: Dict[tuple, float] = {key: 1.0}
    verts: Dict[tuple, np.ndarray] = {key: s}
    h = s.copy()
    gap = math.inf
    for it in range(1, max_iter + 1):
        f = float(np.sum(h * h / w))
        value = math.sqrt(f)
        g = 2.0 * h / w
        s_key, s = lmo(g)
        fw_gap = float(g @ (h - s))
        if value == 0.0:
            return h, active, verts, 0.0, it, 0.0
        gap = fw_gap / (2.0 * value)
        if gap <= tol:
            return h, active, verts, value, it, gap
        a_key = max(active, key=lambda kk: float(g @ verts[kk]))
        away_gap = float(g @ (verts[a_key] - h))
        if fw_gap >= away_gap:
            d = s - h
            gmax = 1.0
            fw_step = True
        else:
            alpha = active[a_key]
            d = h - verts[a_key]
            gmax = alpha / (1.0 - alpha) if alpha < 1.0 else math.inf
            fw_step = False
        curv = float(np.sum(d * d / w))
        slope = float(g @ d)
        step = gmax if curv <= 0 else min(gmax, -slope / (2.0 * curv))
        if step <= 0:
            raise ConvergenceError("line search stalled", gap=gap, iterations=it)
        if fw_step:
            for kk in active:
                active[kk] *= 1.0 - step
            if step >= 1.0:
                active = {s_key: 1.0}
                verts = {s_key: s}
            else:
                active[s_key] = active.get(s_key, 0.0) + step
                verts[s_key] = s
        else:
            for kk in active:
                active[kk] *= 1.0 + step
            active[a_key] -= step
            if step >= gmax or active[a_key] <= 1e-15:
                del active[a_key]
                del verts[a_key]
        h = h + step * d
        # drop numerically vanished atoms of the mixture
        for kk in [kk for kk, v in active.items() if v <= 1e-15]:
            del active[kk]
            del verts[kk]
        tot = sum(active.values())
        for kk in active:
            active[kk] /= tot
        h = sum(active[kk] * verts[kk] for kk in active)
    raise ConvergenceError(
        f"Frank-Wolfe did not reach gap {tol:g} in {max_iter} iterations (gap {gap:.3g})",
        gap=gap, iterations=max_iter,
    )


def _threshold_exact(xi: PointConfiguration, mask: np.ndarray, k: int):
    """Exact optimum for ``{nu(W) <= m}``.

    The profile hull is ``{0 <= h <= xi, sum_W h = k}`` and the minimiser of
    ``sum h^2 / xi`` on it is ``h = (k / xi(W)) xi``. It is the uniform mixture
    of the ``xi(W)`` cyclic windows of length ``k`` over the list of units in
    ``W``, each unit being covered exactly ``k`` times.
    """
    n = xi.n_atoms
    idx = np.flatnonzero(mask)
    units = np.repeat(idx, xi.multiplicities[idx])
    W = units.size
    weights: Dict[tuple, float] = {}
    for j in range(W):
        sel = units[(j + np.arange(k)) % W]
        q = np.bincount(sel, minlength=n)
        key = tuple(int(v) for v in q)
        weights[key] = weights.get(key, 0.0) + 1.0 / W
    h = np.zeros(n)
    h[idx] = k / W * xi.multiplicities[idx]
    return h, weights


def convex_distance(problem: ConvexDistanceProblem, tolerance: float = DEFAULT_TOLERANCE,
                    max_iterations: int = MAX_ITERATIONS, method: str = "auto") -> ConvexDistanceResult:
    """``d_T(xi, A)`` with a primal/dual certificate.

    ``value`` is attained by ``optimal_mixture`` (an upper bound on the
    distance) and ``lower_bound = min_q <optimal_u, q>`` is attained by the
    returned weight map, so the true distance lies between them and
    ``value - lower_bound <= tolerance``.

    ``method="auto"`` solves threshold events in closed form and explicit
    events by Frank-Wolfe; ``"frank_wolfe"`` forces the iterative solver.
    """
    if not tolerance > 0:
        raise InvalidArgumentError("tolerance must be positive")
    if method not in ("auto", "frank_wolfe"):
        raise InvalidArgumentError(f"unknown method {method!r}")
    xi = problem.xi
    w = xi.multiplicities.astype(float)
    n = xi.n_atoms
    if problem.is_threshold:
        k = problem.event.removals(xi)
        if k == 0:
            zero = DeficiencyProfile((0,) * n)
            return ConvexDistanceResult(0.0, 0.0, [(zero, 1.0)], np.zeros(n), np.zeros(n), 0, 0.0)
        mask = problem.event.mask(xi)
        lmo = _threshold_lmo(xi.multiplicities, mask, k)
        if method == "auto":
            h, active = _threshold_exact(xi, mask, k)
            value = math.sqrt(float(np.sum(h * h / w)))
            u = h / (w * value)
            _, s = lmo(2.0 * h / w)
            lower = float(u @ s)
            mixture = [(DeficiencyProfile(kk), v) for kk, v in active.items()]
            return ConvexDistanceResult(value, lower, mixture, u, h, 0, value - lower)
    else:
        profiles = deficiency_set(problem)
        Q = np.array([p.values for p in profiles], dtype=float).reshape(len(profiles), n)
        if np.any(Q.sum(axis=1) == 0):
            zero = DeficiencyProfile((0,) * n)
            return ConvexDistanceResult(0.0, 0.0, [(zero, 1.0)], np.zeros(n), np.zeros(n), 0, 0.0)
        lmo = _explicit_lmo(Q)
    h, active, verts, value, iters, gap = _frank_wolfe(w, lmo, tolerance, max_iterations)
    u = h / (w * value)
    _, s = lmo(2.0 * h / w)
    lower = float(u @ s)
    mixture = [(DeficiencyProfile(kk), float(v)) for kk, v in active.items()]
    return ConvexDistanceResult(value, lower, mixture, u, h, iters, value - lower)


def distance(xi: PointConfiguration, event: EventLike, tolerance: float = DEFAULT_TOLERANCE) -> float:
    return convex_distance(ConvexDistanceProblem(xi, event), tolerance).value


def simplex_grid_oracle(problem: ConvexDistanceProblem, n_grid: int = 1000,
                        refinements: int = 8) -> float:
    """Brute-force minimum over a simplex grid, for ``|Q| <= 3`` (debug mode).

    The grid is refined around the best node a fixed number of times, which
    is valid because the objective is convex in the mixture weights.
    """
    profiles = deficiency_set(problem, prune=False)
    if len(profiles) > 3:
        raise InvalidArgumentError("grid oracle supports at most three profiles")
    w = problem.xi.multiplicities.astype(float)
    Q = np.array([p.values for p in profiles], dtype=float).reshape(len(profiles), -1)

    def obj(weights):
        h = weights @ Q
        return np.sum(h * h / w, axis=1)

    if len(Q) == 1:
        return float(math.sqrt(obj(np.ones((1, 1)))[0]))
    dim = len(Q) - 1
    center = np.full(dim, 1.0 / len(Q))
    half = 1.0
    best = math.inf
    for level in range(refinements + 1):
        m = n_grid if level == 0 else 40
        axes = [np.clip(np.linspace(c - half, c + half, m + 1), 0.0, 1.0) for c in center]
        mesh = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
        mesh = mesh[mesh.sum(axis=1) <= 1.0 + 1e-15]
        full = np.hstack([mesh, 1.0 - mesh.sum(axis=1, keepdims=True)])
        vals = obj(full)
        j = int(np.argmin(vals))
        best = min(best, float(vals[j]))
        center = mesh[j]
        half = 2.0 * (2.0 * half / m)
    return math.sqrt(max(best, 0.0))


# --------------------------------------------------------------------------- structural checks


@dataclass
class DTPropertyReport:
    value: float
    v_plus: float
    v_plus_squared: float
    add_differences: np.ndarray
    removal_values: np.ndarray
    probe_values: np.ndarray
    passed: bool


def _witness(problem, what, **extra):
    ev = problem.event.to_dict() if problem.is_threshold else [
        {"points": nu.points.tolist(), "multiplicities": nu.multiplicities.tolist()}
        for nu in problem.event
    ]
    return {
        "points": problem.xi.points.tolist(),
        "multiplicities": problem.xi.multiplicities.tolist(),
        "event": ev,
        "violation": what,
        **extra,
    }


def check_dt_properties(problem: ConvexDistanceProblem, probes=None, n_probes: int = 5,
                        tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
                        raise_on_failure: bool = True) -> DTPropertyReport:
    """Check the structural inequalities of ``d_T`` on one instance.

    Removal differences over every atom give ``V^+(d_T) <= 1`` and
    ``V^+(d_T^2) <= 4 d_T^2``; probe points (fresh or existing atoms) give
    ``0 <= D_z d_T^2 <= 2`` and monotonicity. Slack is ``10 * tolerance``.
    """
    xi = problem.xi
    d = xi.dimension
    slack = 10.0 * tolerance
    dt = convex_distance(problem, tolerance).value
    w = xi.multiplicities.astype(float)
    rem = np.array([convex_distance(problem.with_xi(xi.remove_atom(i)), tolerance).value
                    for i in range(xi.n_atoms)])
    v1 = float(np.sum(w * (dt - rem) ** 2)) if xi.n_atoms else 0.0
    v2 = float(np.sum(w * (dt * dt - rem * rem) ** 2)) if xi.n_atoms else 0.0
    if probes is None:
        rng = np.random.default_rng(seed)
        if problem.is_threshold and problem.event.window is not None:
            lo, hi = problem.event.window.lo, problem.event.window.hi
        elif xi.n_atoms:
            lo, hi = xi.points.min(axis=0), xi.points.max(axis=0) + 1e-9
        else:
            lo, hi = np.zeros(d), np.ones(d)
        fresh = lo + (hi - lo) * rng.random((n_probes, d))
        old = xi.points[rng.integers(0, xi.n_atoms, size=min(n_probes, xi.n_atoms))] \
            if xi.n_atoms else np.empty((0, d))
        probes = np.vstack([fresh, old])
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    plus = np.array([convex_distance(problem.with_xi(xi.add(z)), tolerance).value for z in probes])
    diffs = plus ** 2 - dt ** 2
    failures = []
    if v1 > 1 + slack:
        failures.append(("V+(d_T) <= 1", v1))
    if v2 > 4 * dt * dt + slack:
        failures.append(("V+(d_T^2) <= 4 d_T^2", v2))
    if diffs.size and (diffs.min() < -slack or diffs.max() > 2 + slack):
        failures.append(("0 <= D_z d_T^2 <= 2", float(diffs.min()), float(diffs.max())))
    if plus.size and np.any(plus < dt - slack):
        failures.append(("monotone in xi", float((plus - dt).min())))
    report = DTPropertyReport(dt, v1, v2, diffs, rem, plus, not failures)
    if failures and raise_on_failure:
        raise PropertyViolationError(
            f"convex distance property failed: {failures}",
            witness=_witness(problem, failures, probes=probes.tolist()),
        )
    return report


# --------------------------------------------------------------------------- isoperimetry


@dataclass
class IsoperimetricReport:
    P_A_estimate: float
    E_exp_estimate: float
    product: float
    product_upper_CI: float
    replications: int
    constant: float
    tail_rows: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.product_upper_CI <= 1.02

    pass_ = passed


def isoperimetric_check(model: IntensityModel, event: ThresholdEvent, replications: int = 10 ** 4,
                        seed=0, constant: float = 0.1, r_grid: Optional[Sequence[float]] = None,
                        confidence: float = 0.99, tolerance: float = 1e-7) -> IsoperimetricReport:
    """Monte Carlo estimate of ``P(A) E exp(constant d_T^2)`` on shared replications.

    The upper confidence bound uses the delta method on the pair of sample
    means. ``r_grid`` adds rows comparing ``P(d_T >= r)`` with
    ``exp(-constant r^2) / P(A)``.
    """
    from .sampler import SeedSpec, _as_seed, sample

    if not isinstance(event, ThresholdEvent):
        raise InvalidArgumentError("isoperimetric_check samples threshold events")
    if replications < 2:
        raise InvalidArgumentError("need at least two replications")
    base = _as_seed(seed)
    inA = np.empty(replications)
    dts = np.empty(replications)
    for k in range(replications):
        xi = sample(model, SeedSpec(base.master_seed, k))
        inA[k] = event.contains(xi)
        dts[k] = 0.0 if inA[k] else convex_distance(ConvexDistanceProblem(xi, event), tolerance).value
    p = float(inA.mean())
    if p == 0.0 or p == 1.0:
        raise DegenerateEventError(f"estimated P(A) = {p}; choose a threshold with 0 < P(A) < 1")
    y = np.exp(constant * dts * dts)
    e = float(y.mean())
    cov = np.cov(np.vstack([inA, y]), ddof=1) / replications
    var = e * e * cov[0, 0] + p * p * cov[1, 1] + 2 * p * e * cov[0, 1]
    z = stats.norm.ppf(confidence)
    prod = p * e
    upper = prod + z * math.sqrt(max(var, 0.0))
    rows = []
    for r in (r_grid or []):
        emp = float(np.mean(dts >= r))
        rows.append({"r": float(r), "empirical": emp, "bound": math.exp(-constant * r * r) / p})
    return IsoperimetricReport(p, e, prod, upper, replications, constant, rows)
