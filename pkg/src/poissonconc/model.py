"""Point configurations, observation windows and intensity measures on R^d."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    ConfigurationError,
    DivergentMeanError,
    InvalidArgumentError,
    UnsupportedGeometryError,
)
from .integrate import (
    ball_box_integral,
    disk_box_polar,
    gauss_legendre_cells,
    radial_integral,
    unit_ball_volume,
    unit_sphere_area,
)

OVERFLOW_GUARD = 1e15


def _as_points(points, dimension=None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        if dimension is not None and arr.size == 0:
            arr = arr.reshape(0, dimension)
        else:
            arr = arr.reshape(1, -1) if dimension is None else arr.reshape(-1, dimension)
    if arr.ndim != 2:
        raise InvalidArgumentError("points must be an (n, d) array")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("point coordinates must be finite")
    return arr


def _rows_distinct(arr: np.ndarray) -> bool:
    if len(arr) < 2:
        return True
    order = np.lexsort(arr.T[::-1])
    srt = arr[order]
    return not np.any(np.all(srt[1:] == srt[:-1], axis=1))


@dataclass(frozen=True)
class Window:
    """Axis-aligned box ``[lower, upper]``; ``periodic`` turns it into a flat torus."""

    lower: tuple
    upper: tuple
    periodic: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise InvalidArgumentError("window bounds must have equal positive length")
        if not all(math.isfinite(v) for v in lo + hi):
            raise InvalidArgumentError("window bounds must be finite")
        if not all(a < b for a, b in zip(lo, hi)):
            raise InvalidArgumentError("window requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "periodic", bool(self.periodic))

    @classmethod
    def unit(cls, d: int = 2, periodic: bool = False) -> "Window":
        return cls((0.0,) * d, (1.0,) * d, periodic)

    @classmethod
    def centered(cls, half_side: float, d: int = 2) -> "Window":
        return cls((-half_side,) * d, (half_side,) * d, False)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dimension)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def wrap(self, points) -> np.ndarray:
        pts = _as_points(points, self.dimension)
        if not self.periodic:
            return pts
        return self.lo + np.mod(pts - self.lo, self.sides)

    def displacement(self, x, y) -> np.ndarray:
        """``y - x``, reduced to the minimum image when periodic."""
        diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if self.periodic:
            sides = self.sides
            diff = diff - sides * np.round(diff / sides)
        return diff

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "periodic": self.periodic}


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite multiset of points in R^d stored as distinct atoms with multiplicities."""

    points: np.ndarray
    multiplicities: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2:
            raise InvalidArgumentError("points must be an (n, d) array")
        if pts.shape[1] == 0:
            raise InvalidArgumentError("dimension must be positive")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        if self.multiplicities is None:
            mult = np.ones(len(pts), dtype=np.int64)
        else:
            mult = np.array(self.multiplicities, dtype=np.int64).reshape(-1)
        if mult.shape[0] != pts.shape[0]:
            raise InvalidArgumentError("one multiplicity per atom is required")
        if np.any(mult < 1):
            raise InvalidArgumentError("multiplicities must be positive integers")
        if not _rows_distinct(pts):
            raise InvalidArgumentError("atoms must be pairwise distinct; use from_points to merge")
        pts.setflags(write=False)
        mult.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "multiplicities", mult)

    @classmethod
    def empty(cls, dimension: int) -> "PointConfiguration":
        return cls(np.empty((0, dimension)))

    @classmethod
    def from_points(cls, points, dimension: Optional[int] = None) -> "PointConfiguration":
        """Build a configuration from a list of points, merging repeated ones."""
        pts = _as_points(points, dimension)
        if len(pts) == 0:
            return cls(pts.reshape(0, pts.shape[1] if pts.shape[1] else dimension))
        if _rows_distinct(pts):
            return cls(pts)
        uniq, inverse, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
        # keep first-occurrence order for readability of downstream output
        first = np.full(len(uniq), len(pts))
        np.minimum.at(first, inverse.reshape(-1), np.arange(len(pts)))
        order = np.argsort(first)
        return cls(uniq[order], counts[order])

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def total(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def is_simple(self) -> bool:
        return bool(np.all(self.multiplicities == 1))

    def __len__(self) -> int:
        return self.total

    def index_of(self, x) -> int:
        """Atom index of ``x`` or ``-1`` when ``x`` is not in the support."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.n_atoms == 0:
            return -1
        hit = np.flatnonzero(np.all(self.points == x, axis=1))
        return int(hit[0]) if hit.size else -1

    def multiplicity(self, x) -> int:
        i = self.index_of(x)
        return 0 if i < 0 else int(self.multiplicities[i])

    def add(self, x, count: int = 1) -> "PointConfiguration":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dimension:
            raise InvalidArgumentError("dimension mismatch")
        i = self.index_of(x[0])
        if i >= 0:
            mult = self.multiplicities.copy()
            mult[i] += count
            return PointConfiguration(self.points, mult)
        return PointConfiguration(
            np.vstack([self.points, x]), np.append(self.multiplicities, count)
        )

    def remove(self, x) -> "PointConfiguration":
        """Return ``self - delta_x``."""
        i = self.index_of(x)
        if i < 0:
            raise InvalidArgumentError("point is not in the configuration")
        return self.remove_atom(i)

    def remove_atom(self, i: int) -> "PointConfiguration":
        mult = self.multiplicities.copy()
        if mult[i] > 1:
            mult[i] -= 1
            return PointConfiguration(self.points, mult)
        keep = np.arange(self.n_atoms) != i
        return PointConfiguration(self.points[keep], mult[keep])

    def restrict(self, window: Window) -> "PointConfiguration":
        mask = window.contains(self.points) if self.n_atoms else np.zeros(0, bool)
        return PointConfiguration(self.points[mask], self.multiplicities[mask])

    def expanded(self) -> np.ndarray:
        """Points repeated according to their multiplicities."""
        return np.repeat(self.points, self.multiplicities, axis=0)

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.multiplicities, other.multiplicities)
        )

    def __hash__(self):
        return hash((self.points.tobytes(), self.multiplicities.tobytes()))

    def __repr__(self):
        return f"PointConfiguration(n_atoms={self.n_atoms}, total={self.total}, d={self.dimension})"


class IntensityModel:
    """Non-atomic intensity measure with a density on a finite window.

    Subclasses provide ``density`` and the geometry-specific ``ball_mass``.
    """

    variant = "abstract"

    def __init__(self, rate: float, window: Window):
        if not (rate >= 0 and math.isfinite(rate)):
            raise InvalidArgumentError("rate must be finite and non-negative")
        self.rate = float(rate)
        self.window = window

    @property
    def dimension(self) -> int:
        return self.window.dimension

    @property
    def periodic(self) -> bool:
        return self.window.periodic

    def total_mass(self) -> float:
        raise NotImplementedError

    def density(self, points) -> np.ndarray:
        raise NotImplementedError

    def max_density(self) -> float:
        raise NotImplementedError

    def ball_mass(self, center, radius: float) -> float:
        raise NotImplementedError

    def scaled(self, factor: float) -> "IntensityModel":
        """The model with intensity multiplied by ``factor``."""
        params = self.to_dict()
        params["rate"] = self.rate * factor
        return model_from_dict(params)

    def _check_radius(self, radius):
        if not radius > 0:
            raise InvalidArgumentError("radius must be positive")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "rate": self.rate, "window": self.window.to_dict()}

    def __repr__(self):
        return f"{type(self).__name__}(rate={self.rate}, window={self.window})"

    def __eq__(self, other):
        return isinstance(other, IntensityModel) and self.to_dict() == other.to_dict()


class HomogeneousBox(IntensityModel):
    """``rate`` times Lebesgue measure restricted to a (non-periodic) box."""

    variant = "homogeneous_box"

    def __init__(self, rate: float, window: Window):
        if window.periodic:
            raise InvalidArgumentError("HomogeneousBox needs a non-periodic window")
        super().__init__(rate, window)

    def total_mass(self) -> float:
        return self.rate * self.window.volume

    def density(self, points) -> np.ndarray:
        pts = _as_points(points, self.dimension)
        return np.where(self.window.contains(pts), self.rate, 0.0)

    def max_density(self) -> float:
        return self.rate

    def ball_mass(self, center, radius: float) -> float:
        self._check_radius(radius)
        if self.rate == 0:
            return 0.0
        vol = ball_box_integral(center, radius, self.window.lo, self.window.hi)
        return self.rate * vol


class HomogeneousTorus(IntensityModel):
    """``rate`` times Lebesgue measure on a flat torus (periodic box)."""

    variant = "homogeneous_torus"

    def __init__(self, rate: float, window: Window):
        if not window.periodic:
            window = Window(window.lower, window.upper, periodic=True)
        super().__init__(rate, window)

    def total_mass(self) -> float:
        return self.rate * self.window.volume

    def density(self, points) -> np.ndarray:
        pts = _as_points(points, self.dimension)
        return np.full(len(pts), self.rate)

    def max_density(self) -> float:
        return self.rate

    def check_radius(self, radius: float):
        self._check_radius(radius)
        if 2 * radius > self.window.sides.min():
            raise UnsupportedGeometryError(
                "torus ball mass needs 2*radius <= shortest side "
                f"({2 * radius} > {self.window.sides.min()})"
            )

    def ball_mass(self, center, radius: float) -> float:
        self.check_radius(radius)
        return self.rate * unit_ball_volume(self.dimension) * radius ** self.dimension


class RadialDensity(IntensityModel):
    """Density ``rate * (|x| + 1)^(-exponent)`` truncated to a finite window."""

    variant = "radial_density"

    def __init__(self, rate: float, window: Window, exponent: float = 2.0):
        if window.periodic:
            raise InvalidArgumentError("RadialDensity needs a non-periodic window")
        if not exponent >= 0:
            raise InvalidArgumentError("exponent must be non-negative")
        super().__init__(rate, window)
        self.exponent = float(exponent)
        self._total = None

    def density(self, points) -> np.ndarray:
        pts = _as_points(points, self.dimension)
        val = self.rate * (np.linalg.norm(pts, axis=1) + 1.0) ** (-self.exponent)
        return np.where(self.window.contains(pts), val, 0.0)

    def _dens_scalar(self, x) -> float:
        return self.rate * (math.sqrt(float(np.dot(x, x))) + 1.0) ** (-self.exponent)

    def max_density(self) -> float:
        # density is largest at the window point closest to the origin
        closest = np.clip(0.0, self.window.lo, self.window.hi)
        return self.rate * (np.linalg.norm(closest) + 1.0) ** (-self.exponent)

    def total_mass(self) -> float:
        if self._total is None:
            if self.rate == 0:
                self._total = 0.0
            else:
                self._total = self._window_mass()
        return self._total

    def _window_mass(self) -> float:
        lo, hi = self.window.lo, self.window.hi
        far = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        if self.dimension == 2:
            # a disk around the origin covering the window, clipped to it
            return self._ball_mass_polar(np.zeros(2), far * (1 + 1e-9))
        # cells graded geometrically towards the kink of |x| at the origin
        steps = 2.0 ** np.arange(-6, math.ceil(math.log2(far + 1.0)) + 1)
        breaks = [np.concatenate([-steps, [0.0], steps])] * self.dimension
        return _window_integral(lambda pts: self.density(pts), self.window, cell=math.inf,
                                order=8, breaks=breaks)

    def ball_mass(self, center, radius: float) -> float:
        self._check_radius(radius)
        if self.rate == 0:
            return 0.0
        if self.dimension == 2:
            return self._ball_mass_polar(np.asarray(center, dtype=float), float(radius))
        return ball_box_integral(
            center, radius, self.window.lo, self.window.hi, weight=self._dens_scalar,
            epsrel=1e-9,
        )

    def _ball_mass_polar(self, c, radius):
        # the density varies on the scale 1 + |y|, so cut rays geometrically
        r0 = math.hypot(c[0], c[1])
        steps = 2.0 ** np.arange(-6, math.ceil(math.log2(radius + r0 + 1.0)) + 1)
        splits = np.concatenate([steps, r0 + steps, r0 - steps])
        splits = splits[(splits > 0) & (splits < radius)]
        return self.rate * disk_box_polar(
            c, radius, self.window.lo, self.window.hi,
            weight=lambda pts: (np.linalg.norm(pts, axis=-1) + 1.0) ** (-self.exponent),
            split_at_origin=True, radial_splits=splits,
        )

    def neglected_mass_bound(self) -> float:
        """Upper bound for the intensity mass outside the truncation window."""
        lo, hi = self.window.lo, self.window.hi
        if np.any(lo > 0) or np.any(hi < 0):
            return math.inf
        r_in = float(min(np.min(-lo), np.min(hi)))
        d = self.dimension
        if self.exponent <= d:
            return math.inf
        from scipy import integrate

        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * (r + 1.0) ** (-self.exponent), r_in, math.inf
        )
        return self.rate * unit_sphere_area(d) * val

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["exponent"] = self.exponent
        return out


def _window_integral(func, window: Window, cell: float, order: int = 8, breaks=None) -> float:
    nodes, weights = gauss_legendre_cells(window.lo, window.hi, cell, order, breaks)
    return float(np.dot(func(nodes), weights))


def ball_mass(model: IntensityModel, center, radius: float) -> float:
    """``mu(B(center, radius))`` for any intensity model."""
    return model.ball_mass(center, radius)


def edge_count_mean(model: IntensityModel, radius: float) -> float:
    """Expected number of edges of the disk graph, ``1/2 ∫ mu(B(x, radius)) dmu(x)``."""
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    if model.rate == 0:
        return 0.0
    d = model.dimension
    if isinstance(model, HomogeneousTorus):
        model.check_radius(radius)
        val = 0.5 * model.ball_mass(model.window.lo, radius) * model.total_mass()
    elif isinstance(model, HomogeneousBox):
        # ∫∫ 1{|x-y|<=rho} dx dy = ∫_{|h|<=rho} prod_i (L_i - |h_i|)_+ dh
        sides = model.window.sides
        val = 0.5 * model.rate * model.rate * ball_box_integral(
            np.zeros(d),
            radius,
            -sides,
            sides,
            weight=lambda h: float(np.prod(np.maximum(sides - np.abs(h), 0.0))),
            kinks=[0.0],
        )
    else:
        w = model.window
        breaks = [sorted({a + radius, b - radius, 0.0}) for a, b in zip(w.lower, w.upper)]
        cell = min(radius / 2.0, float(w.sides.min()))

        def inner(pts):
            dens = model.density(pts)
            return np.array(
                [model.ball_mass(p, radius) * q if q > 0 else 0.0 for p, q in zip(pts, dens)]
            )

        val = 0.5 * _window_integral(inner, w, cell=cell, order=4, breaks=breaks)
    if not math.isfinite(val) or val > OVERFLOW_GUARD:
        raise DivergentMeanError(f"edge count mean exceeds overflow guard ({val})")
    return float(val)


_VARIANTS = {
    HomogeneousBox.variant: HomogeneousBox,
    HomogeneousTorus.variant: HomogeneousTorus,
    RadialDensity.variant: RadialDensity,
}


def model_from_dict(params: dict) -> IntensityModel:
    """Inverse of ``IntensityModel.to_dict``.

    Schema: ``variant`` (homogeneous_box | homogeneous_torus | radial_density),
    ``rate``, ``window`` = {``lower``, ``upper``, ``periodic``}, and
    ``exponent`` for the radial variant.
    """
    try:
        variant = params["variant"]
        cls = _VARIANTS[variant]
        win = params["window"]
        periodic = bool(win.get("periodic", variant == HomogeneousTorus.variant))
        window = Window(tuple(win["lower"]), tuple(win["upper"]), periodic)
        rate = float(params["rate"])
    except KeyError as exc:
        raise ConfigurationError(f"model config is missing or has unknown key: {exc}") from exc
    if cls is RadialDensity:
        return RadialDensity(rate, window, float(params.get("exponent", 2.0)))
    return cls(rate, window)


def load_model(path) -> IntensityModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: IntensityModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
