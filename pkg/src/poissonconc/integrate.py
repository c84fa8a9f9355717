"""Quadrature helpers for integrals over balls, boxes and their intersections.

Everything here is deterministic: fixed rules or ``scipy.integrate.quad`` with
explicit tolerances, so repeated calls give bit-identical results.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200


def unit_ball_volume(d: int) -> float:
    """Lebesgue measure of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def unit_sphere_area(d: int) -> float:
    return d * unit_ball_volume(d)


def _quad(func, a, b, points=None, epsrel=QUAD_EPSREL):
    if b <= a:
        return 0.0
    if points is not None:
        points = [p for p in points if a < p < b]
        if not points:
            points = None
    val, _ = integrate.quad(
        func, a, b, points=points, epsabs=0.0, epsrel=epsrel, limit=QUAD_LIMIT
    )
    return val


def ball_box_integral(
    center: np.ndarray,
    radius: float,
    lower: np.ndarray,
    upper: np.ndarray,
    weight: Optional[Callable[[np.ndarray], float]] = None,
    kinks: Optional[Sequence[float]] = None,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """Integrate ``weight`` (Lebesgue if ``None``) over ``B(center, radius) ∩ box``.

    The ball is sliced coordinate by coordinate; each slice is again a ball of
    lower dimension clipped to the remaining box faces, so the unweighted
    integrand is smooth away from the slice endpoints that are passed to
    ``quad`` as break points. ``kinks`` lists coordinate values (same for every
    axis) where ``weight`` is not smooth, e.g. ``0`` for ``|h_i|``.
    """
    center = np.asarray(center, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = center.size
    prefix = np.empty(d)

    def rec(axis: int, r2: float) -> float:
        r = math.sqrt(max(r2, 0.0))
        a = max(lower[axis], center[axis] - r)
        b = min(upper[axis], center[axis] + r)
        if b <= a:
            return 0.0
        if axis == d - 1:
            if weight is None:
                return b - a

            def last(s):
                prefix[axis] = s
                return weight(prefix)

            return _quad(last, a, b, points=kinks, epsrel=epsrel)

        def inner(s):
            prefix[axis] = s
            return rec(axis + 1, r2 - (s - center[axis]) ** 2)

        # slice radius hits the next faces where (s - c)^2 = r^2 - (face - c')^2
        pts = [center[axis]]
        for j in range(axis + 1, d):
            for face in (lower[j], upper[j]):
                rem = r2 - (face - center[j]) ** 2
                if rem > 0:
                    q = math.sqrt(rem)
                    pts.extend((center[axis] - q, center[axis] + q))
        if kinks is not None:
            pts.extend(kinks)
        return _quad(inner, a, b, points=sorted(set(pts)), epsrel=epsrel)

    return rec(0, float(radius) ** 2)


def box_integral(
    func: Callable[[np.ndarray], float],
    lower: np.ndarray,
    upper: np.ndarray,
    breaks: Optional[Sequence[Sequence[float]]] = None,
    epsrel: float = 1e-8,
) -> float:
    """Nested adaptive integration of a scalar ``func`` over a box.

    ``breaks[i]`` are known non-smooth points along axis ``i``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    x = np.empty(d)

    def rec(axis: int) -> float:
        pts = None if breaks is None else breaks[axis]

        def g(s):
            x[axis] = s
            if axis == d - 1:
                return func(x)
            return rec(axis + 1)

        return _quad(g, lower[axis], upper[axis], points=pts, epsrel=epsrel)

    return rec(0)


def gauss_legendre_cells(
    lower: np.ndarray,
    upper: np.ndarray,
    cell: float,
    order: int = 6,
    breaks: Optional[Sequence[Sequence[float]]] = None,
):
    """Nodes and weights of a composite tensor Gauss-Legendre rule on a box.

    Cells have side at most ``cell`` and are split at every value in
    ``breaks[i]`` along axis ``i`` so that integrands with kinks on those
    hyperplanes are integrated at full order.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    x0, w0 = special.roots_legendre(order)
    axes_nodes, axes_weights = [], []
    for i in range(d):
        edges = {lower[i], upper[i]}
        if breaks is not None:
            edges.update(b for b in breaks[i] if lower[i] < b < upper[i])
        edges = np.array(sorted(edges))
        segs = []
        for a, b in zip(edges[:-1], edges[1:]):
            m = max(1, int(math.ceil((b - a) / cell - 1e-12)))
            segs.append(np.linspace(a, b, m + 1))
        grid = np.unique(np.concatenate(segs))
        a, b = grid[:-1], grid[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        axes_nodes.append((mid[:, None] + half[:, None] * x0[None, :]).ravel())
        axes_weights.append((half[:, None] * w0[None, :]).ravel())
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    wmesh = np.meshgrid(*axes_weights, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    return nodes, weights


_LEGENDRE = {}


def legendre(order: int):
    """Cached Gauss-Legendre nodes and weights on [-1, 1]."""
    if order not in _LEGENDRE:
        _LEGENDRE[order] = special.roots_legendre(order)
    return _LEGENDRE[order]


def _gl_segments(a, b, order):
    x0, w0 = legendre(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[..., None] + half[..., None] * x0
    return nodes, half[..., None] * w0


def disk_box_polar(
    center,
    radius: float,
    lower,
    upper,
    radial: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    weight: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    cutoff: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    split_at_origin: bool = False,
    order: int = 16,
    extra_angles: int = 0,
    radial_splits: Optional[Sequence[float]] = None,
) -> float:
    """``∫ radial(|y - c|) weight(y) dy`` over ``B(c, radius) ∩ box`` in the plane.

    Polar coordinates around ``c``. Along each direction ``u`` the ray is cut at
    the box, at ``radius`` and optionally at ``cutoff(u)``; the angular range is
    split wherever the active face changes so each piece is smooth. With
    ``split_at_origin`` the ray through the origin is also a split line (for
    densities with a cusp there). ``extra_angles`` adds uniform angular splits
    when ``cutoff`` has kinks that are not known in advance. ``radial_splits``
    are extra cut radii along every ray (for weights varying on many scales).
    """
    c = np.asarray(center, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.any(c < lo - radius) or np.any(c > hi + radius):
        return 0.0
    two_pi = 2 * math.pi
    kinks = [0.0, two_pi]
    for axis in range(2):
        normal0 = 0.0 if axis == 0 else math.pi / 2
        for face, sgn in ((lo[axis], -1.0), (hi[axis], 1.0)):
            dist = sgn * (face - c[axis])
            if abs(dist) < radius:
                normal = normal0 + (math.pi if sgn < 0 else 0.0)
                half = math.acos(max(-1.0, min(1.0, dist / radius)))
                kinks.extend((normal - half, normal + half))
    for cx in (lo[0], hi[0]):
        for cy in (lo[1], hi[1]):
            kinks.append(math.atan2(cy - c[1], cx - c[0]))
    r0 = math.hypot(c[0], c[1])
    if split_at_origin and 0 < r0 <= radius:
        kinks.append(math.atan2(-c[1], -c[0]))
    if extra_angles:
        kinks.extend(np.linspace(0.0, two_pi, extra_angles + 1))
    kinks = np.unique(np.mod(kinks, two_pi))
    kinks = np.append(kinks, two_pi)
    th, wth = _gl_segments(kinks[:-1], kinks[1:], order)
    th, wth = th.ravel(), wth.ravel()
    u = np.stack([np.cos(th), np.sin(th)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(u > 0, (hi - c) / u, np.where(u < 0, (lo - c) / u, np.inf))
        t_lo = np.where(u > 0, (lo - c) / u, np.where(u < 0, (hi - c) / u, -np.inf))
    s_max = np.clip(np.min(t_hi, axis=1), 0.0, radius)
    if cutoff is not None:
        s_max = np.minimum(s_max, np.maximum(cutoff(u), 0.0))
    s_min = np.minimum(np.clip(np.max(t_lo, axis=1), 0.0, radius), s_max)
    cuts = [r0] if split_at_origin else []
    if radial_splits is not None:
        cuts.extend(radial_splits)
    cuts = np.unique(np.asarray(cuts, dtype=float))
    bounds = [s_min] + [np.clip(np.full_like(s_min, v), s_min, s_max) for v in cuts] + [s_max]
    bounds = np.sort(np.stack(bounds), axis=0)
    pieces = zip(bounds[:-1], bounds[1:])
    total = 0.0
    for a, b in pieces:
        s, ws = _gl_segments(a, b, order)
        val = s * (radial(s) if radial is not None else 1.0)
        if weight is not None:
            pts = c + s[:, :, None] * u[:, None, :]
            val = val * weight(pts)
        total += float(np.sum(wth * np.sum(ws * val, axis=1)))
    return total


def radial_integral(
    func: Callable[[float], float], d: int, r_max: float = math.inf, epsrel: float = 1e-10
) -> float:
    """Integral of a radial function ``func(|x|)`` over the ball of radius ``r_max``."""
    s_d = unit_sphere_area(d)
    val, _ = integrate.quad(
        lambda r: func(r) * r ** (d - 1), 0.0, r_max, epsabs=0.0, epsrel=epsrel, limit=QUAD_LIMIT
    )
    return s_d * val
