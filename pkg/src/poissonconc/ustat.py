"""Poisson U-statistics: evaluation, local versions, add-one costs, V statistics and
the variance decomposition through the marginal kernels ``f_i``.

A U-statistic of order ``k`` sums a symmetric kernel ``f >= 0`` over ordered
``k``-tuples of distinct points. The named geometric kernels are order two and
run through the grid-backed graph builder; user kernels take the plain
``O(n^k)`` path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as spi, optimize

from .errors import (
    DivergentIntegralError,
    InvalidArgumentError,
    PropertyViolationError,
    UnsupportedGeometryError,
)
from .graph import DiskGraph, IntersectionGraph, build_graph
from .integrate import (
    ball_box_integral,
    box_integral,
    disk_box_polar,
    gauss_legendre_cells,
    legendre,
    unit_ball_volume,
)
from .model import (
    HomogeneousBox,
    HomogeneousTorus,
    IntensityModel,
    PointConfiguration,
    RadialDensity,
    Window,
)

USER_KERNEL_GUARD = 10 ** 8
DIVERGENCE_GUARD = 1e15


# --------------------------------------------------------------------------- kernels


class KernelSpec:
    """Symmetric order-``k`` kernel ``f >= 0``.

    Subclasses implement ``__call__(*points)``; order-two geometric kernels also
    implement ``pair_values(dist, x, y)`` (vectorised over pairs) and expose a
    ``rule`` for neighbour search.
    """

    order = 2
    symmetric = True
    name = "kernel"
    window: Optional[Window] = None

    def __call__(self, *points) -> float:
        raise NotImplementedError

    def _dist(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.window is not None and self.window.periodic:
            diff = self.window.displacement(x, y)
        else:
            diff = y - x
        return np.linalg.norm(diff, axis=-1)

    @property
    def geometric(self) -> bool:
        return hasattr(self, "pair_values")

    def params(self) -> dict:
        return {}


class EdgeIndicator(KernelSpec):
    """``f(x, y) = 1/2 * 1{|x - y| <= rho}``; the U-statistic is the disk-graph edge count."""

    name = "edge_indicator"

    def __init__(self, rho: float, window: Optional[Window] = None):
        if not rho > 0:
            raise InvalidArgumentError("rho must be positive")
        self.rho = float(rho)
        self.window = window if (window is not None and window.periodic) else None
        self.rule = DiskGraph(self.rho)

    def pair_values(self, dist, x=None, y=None):
        dist = np.asarray(dist, dtype=float)
        return np.where((dist > 0) & (dist <= self.rho), 0.5, 0.0)

    def radial(self, s):
        return np.where(s <= self.rho, 0.5, 0.0)

    def range_of(self, y) -> np.ndarray:
        return np.full(len(np.atleast_2d(y)), self.rho)

    def __call__(self, x, y) -> float:
        return float(self.pair_values(self._dist(x, y)))

    def params(self):
        return {"rho": self.rho}


class LengthPower(KernelSpec):
    """``f(x, y) = 1/2 * 1{|x - y| <= rho} * |x - y|**alpha``, ``alpha`` in [0, 1]."""

    name = "length_power"

    def __init__(self, rho: float, alpha: float, window: Optional[Window] = None):
        if not rho > 0:
            raise InvalidArgumentError("rho must be positive")
        if not 0.0 <= alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in [0, 1]")
        self.rho = float(rho)
        self.alpha = float(alpha)
        self.window = window if (window is not None and window.periodic) else None
        self.rule = DiskGraph(self.rho)

    def pair_values(self, dist, x=None, y=None):
        dist = np.asarray(dist, dtype=float)
        inside = (dist > 0) & (dist <= self.rho)
        if self.alpha == 0:
            return np.where(inside, 0.5, 0.0)
        return np.where(inside, 0.5 * np.abs(dist) ** self.alpha, 0.0)

    def radial(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= self.rho, 0.5 * s ** self.alpha, 0.0)

    def range_of(self, y) -> np.ndarray:
        return np.full(len(np.atleast_2d(y)), self.rho)

    def __call__(self, x, y) -> float:
        return float(self.pair_values(self._dist(x, y)))

    def params(self):
        return {"rho": self.rho, "alpha": self.alpha}


class VariableRadiusLength(KernelSpec):
    """``f(x, y) = 1/2 |x - y| 1{|x - y| <= rho(x) + rho(y)}``, ``rho(x) = (|x| + 1)^(-gamma)``."""

    name = "variable_radius_length"

    def __init__(self, gamma: float):
        self.rule = IntersectionGraph(gamma)
        self.gamma = float(gamma)
        self.window = None

    def rho(self, x) -> np.ndarray:
        return self.rule.rho(x)

    def pair_values(self, dist, x, y):
        dist = np.asarray(dist, dtype=float)
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        reach = self.rho(x) + self.rho(y)
        return np.where((dist > 0) & (dist <= reach), 0.5 * dist, 0.0)

    def range_of(self, y) -> np.ndarray:
        # |x - y| <= rho(x) + rho(y) <= (3^gamma + 1) rho(y)
        return (3.0 ** self.gamma + 1.0) * self.rho(y)

    def __call__(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return float(self.pair_values(self._dist(x, y), x, y)[0])

    def params(self):
        return {"gamma": self.gamma}


class UserKernel(KernelSpec):
    """Wrap a Python callable ``func(x_1, ..., x_k) -> float >= 0`` as a kernel."""

    def __init__(self, func: Callable, order: int, symmetric: bool = True, name: str = "user",
                 window: Optional[Window] = None):
        if order < 1:
            raise InvalidArgumentError("kernel order must be >= 1")
        self.func = func
        self.order = int(order)
        self.symmetric = bool(symmetric)
        self.name = name
        self.window = window if (window is not None and window.periodic) else None

    def __call__(self, *points) -> float:
        return float(self.func(*points))


class ZeroKernel(UserKernel):
    def __init__(self, order: int = 2):
        super().__init__(lambda *xs: 0.0, order, True, "zero")


def make_kernel(name: str, window: Optional[Window] = None, **params) -> KernelSpec:
    """Named kernel factory used by the CLI and experiment specs."""
    if name in ("edge", "edge_indicator", "edge_count"):
        return EdgeIndicator(params["rho"], window)
    if name in ("length_power",):
        return LengthPower(params["rho"], params.get("alpha", 1.0), window)
    if name in ("variable_radius_length", "vr_length"):
        return VariableRadiusLength(params["gamma"])
    raise InvalidArgumentError(f"unknown kernel {name!r}")


# --------------------------------------------------------------------------- evaluation


def _check_simple(config: PointConfiguration):
    if not config.is_simple:
        raise InvalidArgumentError("U-statistics are evaluated on simple configurations")


def _graph(kernel: KernelSpec, config: PointConfiguration):
    return build_graph(config, kernel.rule, kernel.window)


def _edge_values(kernel: KernelSpec, g) -> np.ndarray:
    if len(g.edges) == 0:
        return np.empty(0)
    pts = g.points
    if kernel.window is not None:
        pts = kernel.window.wrap(pts)
    return kernel.pair_values(g.lengths, pts[g.edges[:, 0]], pts[g.edges[:, 1]])


def _user_guard(kernel, n):
    if float(n) ** kernel.order > USER_KERNEL_GUARD:
        raise InvalidArgumentError(
            f"user kernel of order {kernel.order} on {n} points exceeds the n^k <= 1e8 guard"
        )


def _tuple_sum(kernel: UserKernel, pts: np.ndarray, prefix: tuple, m: int) -> float:
    """Sum of ``f(prefix, y_1..y_m)`` over ordered ``m``-tuples of distinct rows of ``pts``."""
    if m == 0:
        return kernel(*prefix)
    n = len(pts)
    if n < m:
        return 0.0
    total = 0.0
    if kernel.symmetric:
        fact = math.factorial(m)
        for comb in itertools.combinations(range(n), m):
            total += kernel(*prefix, *pts[list(comb)]) * fact
    else:
        for perm in itertools.permutations(range(n), m):
            total += kernel(*prefix, *pts[list(perm)])
    return total


def evaluate(kernel: KernelSpec, config: PointConfiguration) -> float:
    """``S_f(config)``: sum of the kernel over ordered tuples of distinct points."""
    _check_simple(config)
    k = kernel.order
    if config.n_atoms < k:
        return 0.0
    if kernel.geometric:
        g = _graph(kernel, config)
        if isinstance(kernel, (EdgeIndicator,)) or (isinstance(kernel, LengthPower) and kernel.alpha == 0):
            return float(len(g.edges))
        return float(2.0 * np.sum(_edge_values(kernel, g)))
    _user_guard(kernel, config.n_atoms)
    return _tuple_sum(kernel, config.points, (), k)


def local_versions(kernel: KernelSpec, config: PointConfiguration) -> np.ndarray:
    """``F(x, config)`` for every atom ``x``."""
    _check_simple(config)
    n = config.n_atoms
    if n == 0:
        return np.zeros(0)
    if kernel.geometric:
        g = _graph(kernel, config)
        vals = _edge_values(kernel, g)
        out = np.bincount(g.edges[:, 0], weights=vals, minlength=n)
        out += np.bincount(g.edges[:, 1], weights=vals, minlength=n)
        return out
    _user_guard(kernel, n)
    pts = config.points
    out = np.empty(n)
    for i in range(n):
        rest = np.delete(pts, i, axis=0)
        out[i] = _tuple_sum(kernel, rest, (pts[i],), kernel.order - 1)
    return out


def local_version(kernel: KernelSpec, config: PointConfiguration, x) -> float:
    """``F(x, config)``: the kernel sum with one argument frozen at the atom ``x``."""
    i = config.index_of(x)
    if i < 0:
        raise InvalidArgumentError("x is not a point of the configuration")
    if config.multiplicities[i] != 1:
        raise InvalidArgumentError("x must have multiplicity one")
    _check_simple(config)
    if kernel.geometric:
        rest = config.remove_atom(i)
        return _new_point_local(kernel, rest, np.asarray(x, dtype=float))
    rest = config.remove_atom(i)
    _user_guard(kernel, config.n_atoms)
    return _tuple_sum(kernel, rest.points, (np.asarray(x, dtype=float),), kernel.order - 1)


def _new_point_local(kernel: KernelSpec, config: PointConfiguration, x: np.ndarray) -> float:
    """``sum_{y in config} f(x, y)`` for order-two geometric kernels (x not in config)."""
    if config.n_atoms == 0:
        return 0.0
    pts = config.points
    xx = x
    if kernel.window is not None:
        pts = kernel.window.wrap(pts)
        xx = kernel.window.wrap(x[None, :])[0]
    dist = kernel._dist(xx[None, :], pts)
    vals = kernel.pair_values(dist, np.broadcast_to(xx, pts.shape), pts)
    return float(np.sum(vals * config.multiplicities))


def add_one_cost(kernel: KernelSpec, config: PointConfiguration, x, check: bool = False) -> float:
    """``D_x S_f(config) = S_f(config + delta_x) - S_f(config) = k F(x, config + delta_x)``.

    With ``check=True`` the identity is confirmed against direct re-evaluation.
    """
    _check_simple(config)
    x = np.asarray(x, dtype=float).reshape(-1)
    if config.index_of(x) >= 0:
        raise InvalidArgumentError("x is already a point of the configuration")
    k = kernel.order
    if kernel.geometric:
        val = k * _new_point_local(kernel, config, x)
    else:
        _user_guard(kernel, config.n_atoms + 1)
        val = k * _tuple_sum(kernel, config.points, (x,), k - 1)
    if check:
        direct = evaluate(kernel, config.add(x)) - evaluate(kernel, config)
        if abs(direct - val) > 1e-9 * max(1.0, abs(direct)):
            raise PropertyViolationError(
                f"add-one cost {val} differs from re-evaluation {direct}",
                witness={"points": config.points.tolist(), "x": x.tolist()},
            )
    return float(val)


# --------------------------------------------------------------------------- V statistics


@dataclass
class VStatistics:
    v_plus: float
    v_minus: float
    beta: float = 0.0


def _support_breaks_2d(centers, radius, lo, hi, model_periodic, sides):
    """Outer (first coordinate) break points for a union of disks."""
    br = [lo[0], hi[0], 0.0]
    for c, r in zip(centers, radius):
        br.extend((c[0] - r, c[0], c[0] + r))
    n = len(centers)
    if n <= 400:
        for i in range(n):
            d = centers[i + 1:] - centers[i]
            dist = np.linalg.norm(d, axis=1)
            r1 = radius[i]
            r2 = radius[i + 1:]
            ok = (dist > 0) & (dist < r1 + r2) & (dist > np.abs(r1 - r2))
            if not np.any(ok):
                continue
            d, dist, r2 = d[ok], dist[ok], r2[ok]
            a = (r1 ** 2 - r2 ** 2 + dist ** 2) / (2 * dist)
            h = np.sqrt(np.maximum(r1 ** 2 - a ** 2, 0.0))
            mid = centers[i] + a[:, None] * d / dist[:, None]
            perp = np.stack([-d[:, 1], d[:, 0]], 1) / dist[:, None]
            br.extend((mid + h[:, None] * perp)[:, 0])
            br.extend((mid - h[:, None] * perp)[:, 0])
    br = np.array(br)
    return np.unique(br[(br >= lo[0]) & (br <= hi[0])])


def _images(points, radius, window):
    """Copies of points shifted by the torus periods that can reach the window."""
    if window is None:
        return points, radius
    sides = window.sides
    out, rad = [], []
    for shift in itertools.product((-1, 0, 1), repeat=points.shape[1]):
        out.append(points + np.array(shift) * sides)
        rad.append(radius)
    return np.vstack(out), np.concatenate(rad)


def _v_minus_geometric_2d(kernel, config, model, order=16):
    w = model.window
    lo, hi = w.lo, w.hi
    pts = config.points
    if kernel.window is not None:
        pts = kernel.window.wrap(pts)
    rad = kernel.range_of(pts)
    img, img_rad = _images(pts, rad, kernel.window)
    near = np.all((img >= lo - img_rad[:, None]) & (img <= hi + img_rad[:, None]), axis=1)
    img, img_rad = img[near], img_rad[near]
    mult = np.tile(config.multiplicities, len(near) // len(pts))[near] if len(pts) else np.zeros(0)
    if len(img) == 0:
        return 0.0
    outer_breaks = _support_breaks_2d(img, img_rad, lo, hi, kernel.window is not None, w.sides)
    x0, w0 = legendre(order)
    exact_circles = not isinstance(kernel, VariableRadiusLength)
    # between break points the indicator sum is constant along the line
    piecewise_constant = isinstance(kernel, EdgeIndicator) or (
        isinstance(kernel, LengthPower) and kernel.alpha == 0)

    def F_line(x1, x2):
        act = np.abs(x1 - img[:, 0]) < img_rad
        if not np.any(act):
            return np.zeros(len(x2))
        ys, ms = img[act], mult[act]
        d1 = x1 - ys[:, 0]
        d2 = x2[:, None] - ys[None, :, 1]
        dist = np.sqrt(d1[None, :] ** 2 + d2 ** 2)
        if exact_circles:
            # disk kernels depend on the distance only
            return kernel.pair_values(dist) @ ms
        xs = np.stack([np.full(d2.shape, x1), np.broadcast_to(x2[:, None], d2.shape)], -1)
        vals = kernel.pair_values(dist.ravel(), xs.reshape(-1, 2),
                                  np.broadcast_to(ys, xs.shape).reshape(-1, 2))
        return vals.reshape(d2.shape) @ ms

    def crossings(x1):
        # boundaries of {x2 : |x - y| <= rho(x) + rho(y)} on the vertical line at x1:
        # sign changes of the defining function on a fine grid, refined by bisection
        act = np.abs(x1 - img[:, 0]) < img_rad
        if not np.any(act):
            return np.empty(0)
        ys, rs = img[act], img_rad[act]
        t = np.linspace(-1.0, 1.0, 65)
        z = ys[:, 1:2] + rs[:, None] * t[None, :]
        ry = kernel.rho(ys)
        pts = np.stack([np.full(z.shape, x1), z], -1).reshape(-1, 2)
        hv = np.hypot(x1 - ys[:, 0:1], z - ys[:, 1:2]) - kernel.rho(pts).reshape(z.shape) - ry[:, None]
        sign = np.signbit(hv)
        ii, jj = np.nonzero(sign[:, 1:] != sign[:, :-1])
        if len(ii) == 0:
            return np.empty(0)
        a = z[ii, jj].copy()
        b = z[ii, jj + 1].copy()
        sa = sign[ii, jj]
        sub, rsub = ys[ii], ry[ii]
        for _ in range(60):
            m = 0.5 * (a + b)
            pm = np.stack([np.full(m.shape, x1), m], -1)
            hm = np.hypot(x1 - sub[:, 0], m - sub[:, 1]) - kernel.rho(pm) - rsub
            same = np.signbit(hm) == sa
            a = np.where(same, m, a)
            b = np.where(same, b, m)
        return 0.5 * (a + b)

    def inner(x1):
        dx = x1 - img[:, 0]
        act = np.abs(dx) < img_rad
        yc = img[act, 1]
        parts = [np.array([lo[1], hi[1], 0.0]), yc]
        if exact_circles:
            half = np.sqrt(img_rad[act] ** 2 - dx[act] ** 2)
            parts += [yc - half, yc + half]
        else:
            parts.append(crossings(x1))
        br = np.concatenate(parts)
        br = np.unique(br[(br >= lo[1]) & (br <= hi[1])])
        if len(br) < 2:
            return 0.0
        a, b = br[:-1], br[1:]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[:, None] + half[:, None] * x0
        wts = half[:, None] * w0
        nodes, wts = nodes.ravel(), wts.ravel()
        if piecewise_constant:
            val = np.repeat(F_line(x1, 0.5 * (a + b)) ** 2, len(x0))
        else:
            val = F_line(x1, nodes) ** 2
        dens = model.density(np.stack([np.full_like(nodes, x1), nodes], 1))
        return float(np.sum(wts * val * dens))

    tol = 1e-7 if exact_circles else 1e-5
    total = 0.0
    for a, b in zip(outer_breaks[:-1], outer_breaks[1:]):
        if b > a:
            total += spi.quad(inner, a, b, epsabs=0.0, epsrel=tol, limit=200)[0]
    return total


def _v_minus_geometric_1d(kernel, config, model):
    w = model.window
    pts = config.points
    if kernel.window is not None:
        pts = kernel.window.wrap(pts)
    rad = kernel.range_of(pts)
    img, img_rad = _images(pts, rad, kernel.window)
    mult = np.tile(config.multiplicities, len(img) // max(len(pts), 1))
    br = [w.lo[0], w.hi[0], 0.0]
    for y, r in zip(img, img_rad):
        br.extend((y[0] - r, y[0], y[0] + r))
    br = np.array(br)
    br = np.unique(br[(br >= w.lo[0]) & (br <= w.hi[0])])

    def g(s):
        x = np.array([[s]])
        dist = np.abs(img[:, 0] - s)
        vals = kernel.pair_values(dist, np.repeat(x, len(img), 0), img)
        return float(np.sum(vals * mult)) ** 2 * float(model.density(x)[0])

    return sum(spi.quad(g, a, b, epsabs=0.0, epsrel=1e-9, limit=200)[0] for a, b in zip(br[:-1], br[1:]))


def _v_minus_cells(func, model, centers, reach, cell, order=4):
    """Composite Gauss-Legendre over the window cells within ``reach`` of the centers."""
    w = model.window
    nodes, wts = gauss_legendre_cells(w.lo, w.hi, cell, order)
    from scipy.spatial import cKDTree

    if len(centers):
        tree = cKDTree(centers)
        dist, _ = tree.query(nodes)
        keep = dist <= reach
    else:
        keep = np.zeros(len(nodes), bool)
    nodes, wts = nodes[keep], wts[keep]
    if len(nodes) == 0:
        return 0.0
    vals = np.array([func(x) for x in nodes])
    return float(np.sum(wts * vals * model.density(nodes)))


def v_statistics(kernel: KernelSpec, config: PointConfiguration, model: IntensityModel,
                 beta: float = 0.0) -> VStatistics:
    """``V+ = k^2 sum_x F(x, xi)^2`` and ``V- = k^2 ∫ F(x, xi + delta_x)^2 dmu(x)``.

    The integral uses nested quadrature split at every disk boundary in the
    plane (and the line), composite Gauss-Legendre cells of side ``range / 4``
    otherwise.
    """
    _check_simple(config)
    k = kernel.order
    F = local_versions(kernel, config)
    v_plus = float(k * k * np.dot(F, F))
    if config.n_atoms < k - 1 or config.n_atoms == 0:
        return VStatistics(v_plus, 0.0, beta)
    d = config.dimension
    if model.dimension != d:
        raise InvalidArgumentError("model and configuration dimensions differ")
    if kernel.geometric and d == 2:
        integral = _v_minus_geometric_2d(kernel, config, model)
    elif kernel.geometric and d == 1:
        integral = _v_minus_geometric_1d(kernel, config, model)
    elif kernel.geometric:
        reach = float(np.max(kernel.range_of(config.points)))
        pts = config.points

        def func(x):
            return _new_point_local(kernel, config, x) ** 2

        integral = _v_minus_cells(func, model, pts, reach * 1.0001, reach / 4)
    else:
        _user_guard(kernel, config.n_atoms + 1)

        def func(x):
            return _tuple_sum(kernel, config.points, (np.asarray(x, dtype=float).copy(),), k - 1) ** 2 \
                * float(model.density(np.asarray(x)[None, :])[0])

        integral = box_integral(func, model.window.lo, model.window.hi, epsrel=1e-6)
    v_minus = k * k * integral
    if not math.isfinite(v_minus) or v_minus > DIVERGENCE_GUARD:
        raise DivergentIntegralError("V- integral diverges or exceeds the guard")
    return VStatistics(v_plus, float(v_minus), beta)


# --------------------------------------------------------------------------- marginal kernels


class MarginalKernels:
    """The kernels ``f_i = binom(k, i) ∫ f(x_1..x_i, y_{i+1}..y_k) dmu^{k-i}``.

    ``f(i)`` returns a callable of ``i`` points; ``f(k)`` is the kernel itself.
    """

    def __init__(self, kernel: KernelSpec, model: IntensityModel):
        self.kernel = kernel
        self.model = model
        self.k = kernel.order

    def f(self, i: int) -> Callable:
        if not 1 <= i <= self.k:
            raise InvalidArgumentError("marginal index must lie in 1..k")
        if i == self.k:
            return self.kernel
        factor = math.comb(self.k, i)
        if self.kernel.geometric and self.k == 2:
            return lambda x: factor * _inner_integral(self.kernel, self.model, np.asarray(x, float), 1)
        m = self.k - i
        model = self.model
        kern = self.kernel

        def fi(*xs):
            d = model.dimension
            lo = np.tile(model.window.lo, m)
            hi = np.tile(model.window.hi, m)

            def g(z):
                ys = [z[j * d:(j + 1) * d] for j in range(m)]
                dens = np.prod([model.density(y[None, :])[0] for y in ys])
                return kern(*xs, *ys) * dens

            return factor * box_integral(g, lo, hi, epsrel=1e-6)

        return fi


def _inner_integral(kernel, model: IntensityModel, x: np.ndarray, power: int) -> float:
    """``∫ f(x, y)^power dmu(y)`` for the order-two geometric kernels."""
    d = model.dimension
    if isinstance(model, HomogeneousTorus) and isinstance(kernel, (EdgeIndicator, LengthPower)):
        model.check_radius(kernel.rho)
        a = 0.0 if isinstance(kernel, EdgeIndicator) else kernel.alpha
        return model.rate * 0.5 ** power * d * unit_ball_volume(d) * kernel.rho ** (d + power * a) / (d + power * a)
    if kernel.window is not None and not isinstance(model, HomogeneousTorus):
        raise UnsupportedGeometryError("torus kernels need a torus intensity model")
    lo, hi = model.window.lo, model.window.hi
    weight = None if isinstance(model, (HomogeneousBox, HomogeneousTorus)) else \
        (lambda pts: model.density(pts.reshape(-1, d)).reshape(pts.shape[:-1]))
    if isinstance(kernel, (EdgeIndicator, LengthPower)):
        a = 0.0 if isinstance(kernel, EdgeIndicator) else kernel.alpha
        radial = lambda s: (0.5 * s ** a) ** power if a else np.full_like(s, 0.5 ** power)
        if d == 2:
            val = disk_box_polar(x, kernel.rho, lo, hi, radial=radial, weight=weight,
                                 split_at_origin=weight is not None)
        else:
            wfun = (lambda y: (0.5 * np.linalg.norm(y - x) ** a) ** power * float(model.density(y[None, :])[0]))
            val = ball_box_integral(x, kernel.rho, lo, hi, weight=wfun, epsrel=1e-9)
        return model.rate * val if weight is None else val
    if isinstance(kernel, VariableRadiusLength):
        g = kernel.gamma
        rx = float(kernel.rho(x[None, :])[0])
        reach = (3.0 ** g + 1.0) * rx
        if d == 2:
            def cutoff(u):
                out = np.empty(len(u))
                for j, uu in enumerate(u):
                    h = lambda s: s - rx - float(kernel.rho((x + s * uu)[None, :])[0])
                    out[j] = optimize.brentq(h, 0.0, rx + 1.0 + 1e-9, xtol=1e-14)
                return out

            val = disk_box_polar(x, reach, lo, hi, radial=lambda s: (0.5 * s) ** power, weight=weight,
                                 cutoff=cutoff, split_at_origin=True, extra_angles=32)
            return model.rate * val if weight is None else val

        def wfun(y):
            dist = np.linalg.norm(y - x)
            ok = dist <= rx + float(kernel.rho(y[None, :])[0])
            return (0.5 * dist) ** power * ok * float(model.density(y[None, :])[0])

        return ball_box_integral(x, reach, lo, hi, weight=wfun, epsrel=1e-7)
    raise InvalidArgumentError("unsupported kernel for analytic marginals")


def marginal_norms(kernel: KernelSpec, model: IntensityModel) -> list:
    """``[||f_1||^2, ..., ||f_k||^2]`` in ``L^2(mu^i)``."""
    k = kernel.order
    if isinstance(kernel, ZeroKernel):
        return [0.0] * k
    if kernel.geometric:
        out = _geometric_norms(kernel, model)
    else:
        out = _user_norms(kernel, model)
    for v in out:
        if not math.isfinite(v) or v > DIVERGENCE_GUARD:
            raise DivergentIntegralError("marginal kernel norm diverges")
    return out


def _geometric_norms(kernel, model):
    d = model.dimension
    if isinstance(model, HomogeneousTorus) and isinstance(kernel, (EdgeIndicator, LengthPower)):
        vol = model.window.volume
        f1 = 2.0 * _inner_integral(kernel, model, model.window.lo, 1)
        n1 = model.rate * vol * f1 * f1
        n2 = model.rate * vol * _inner_integral(kernel, model, model.window.lo, 2)
        return [float(n1), float(n2)]
    w = model.window
    reach = float(kernel.rho) if hasattr(kernel, "rho") and not callable(kernel.rho) else 1.0
    if isinstance(kernel, VariableRadiusLength):
        reach = 3.0 ** kernel.gamma + 1.0
    breaks = [sorted({a + reach, b - reach, 0.0}) for a, b in zip(w.lower, w.upper)]
    cell = min(reach / 2.0, float(w.sides.min()))
    nodes, wts = gauss_legendre_cells(w.lo, w.hi, cell, 4 if d == 2 else 3, breaks)
    dens = model.density(nodes)
    keep = dens > 0
    nodes, wts, dens = nodes[keep], wts[keep], dens[keep]
    f1 = np.array([2.0 * _inner_integral(kernel, model, x, 1) for x in nodes])
    i2 = np.array([_inner_integral(kernel, model, x, 2) for x in nodes])
    return [float(np.sum(wts * dens * f1 * f1)), float(np.sum(wts * dens * i2))]


def _user_norms(kernel, model):
    k = kernel.order
    d = model.dimension
    mk = MarginalKernels(kernel, model)
    out = []
    for i in range(1, k + 1):
        fi = mk.f(i)
        lo = np.tile(model.window.lo, i)
        hi = np.tile(model.window.hi, i)

        def g(z, fi=fi, i=i):
            xs = [z[j * d:(j + 1) * d].copy() for j in range(i)]
            dens = np.prod([model.density(x[None, :])[0] for x in xs])
            return fi(*xs) ** 2 * dens

        out.append(box_integral(g, lo, hi, epsrel=1e-6))
    return out


@dataclass
class VarianceDecomposition:
    variance: float
    V: float
    norms: list

    @property
    def k2V(self) -> float:
        return (len(self.norms)) ** 2 * self.V


def variance_decomposition(kernel: KernelSpec, model: IntensityModel) -> VarianceDecomposition:
    """``Var F = sum_i i! ||f_i||^2`` and ``V = k^-2 sum_i i i! ||f_i||^2``.

    Raises ``PropertyViolationError`` if ``V > Var F / k``.
    """
    norms = marginal_norms(kernel, model)
    k = kernel.order
    var = sum(math.factorial(i) * n for i, n in enumerate(norms, start=1))
    V = sum(i * math.factorial(i) * n for i, n in enumerate(norms, start=1)) / k ** 2
    if V > var / k * (1 + 1e-12) + 1e-300:
        raise PropertyViolationError(f"V = {V} exceeds Var/k = {var / k}")
    return VarianceDecomposition(float(var), float(V), [float(n) for n in norms])
