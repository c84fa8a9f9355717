"""Closed-form tail bounds for Poisson functionals.

Every bound has the form ``exp(-I(r))``. The rate ``I`` is the primary object:
curves evaluate it directly so that deep tails never underflow, and
``exp(-I)`` is only formed on request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy import optimize

from .errors import InvalidArgumentError

_SERIES_CUT = 1e-3


def _series(x, coeffs):
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x + c
    return out


# coefficients of x^2, x^3, ... for phi(x) = e^x - x - 1 and psi(x) = x e^x - e^x + 1
_PHI_C = [1 / math.factorial(n) for n in range(2, 10)]
_PSI_C = [(n - 1) / math.factorial(n) for n in range(2, 10)]


def phi(z):
    """``e^z - z - 1``, accurate near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUT
    with np.errstate(over="ignore"):
        big = np.expm1(z) - z
    out = np.where(small, z * z * _series(z, _PHI_C), big)
    return out[()] if out.ndim == 0 else out


def psi(z):
    """``z e^z - e^z + 1``, accurate near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUT
    with np.errstate(over="ignore", invalid="ignore"):
        big = z * np.exp(z) - np.expm1(z)
    out = np.where(small, z * z * _series(z, _PSI_C), big)
    return out[()] if out.ndim == 0 else out


def _check_positive_z(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise InvalidArgumentError("z must be positive")
    return z


def Phi_beta(beta: float, z):
    z = _check_positive_z(z)
    beta = float(beta)
    if beta == 0.0:
        return z / 2
    if beta > 0:
        return psi(z * beta) / (z * beta * beta)
    return phi(-z * beta) / (z * beta * beta)


def Psi_beta(beta: float, z):
    z = _check_positive_z(z)
    beta = float(beta)
    if beta == 0.0:
        return z / 2
    return phi(abs(beta) * z) / (z * beta * beta)


def _bennett_h(x):
    """``(1 + x) log(1 + x) - x`` with a series near zero."""
    x = np.asarray(x, dtype=float)
    small = x < _SERIES_CUT
    big = (1 + x) * np.log1p(x) - x
    ser = x * x * (0.5 - x / 6 + x * x / 12 - x ** 3 / 20)
    return np.where(small, ser, big)


# --------------------------------------------------------------------------- curves


@dataclass(eq=False)
class BoundCurve:
    """A tail bound ``r -> exp(-I(r))``.

    ``tail`` is ``"upper"`` for bounds on ``P(F >= EF + r)`` and ``"lower"``
    for ``P(F <= EF - r)``. ``edge_count_rate`` marks curves whose hypotheses
    can hold for edge counts of disk graphs, so that the universal limit on
    their upper-tail rate applies.
    """

    name: str
    parameters: Dict[str, float]
    rate_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    tail: str = "upper"
    edge_count_rate: bool = False

    def rate(self, r):
        """``I(r)``; vectorised, never computed through ``exp``."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(np.isnan(r)):
            raise InvalidArgumentError("r must be non-negative")
        out = np.maximum(np.asarray(self.rate_fn(r), dtype=float), 0.0)
        return out[()] if out.ndim == 0 else out

    def log_evaluate(self, r):
        return -self.rate(r)

    def evaluate(self, r):
        return np.exp(-self.rate(r))

    __call__ = evaluate

    def to_dict(self) -> dict:
        return {"name": self.name, "parameters": dict(self.parameters), "tail": self.tail}


def _pos(name, v):
    v = float(v)
    if not (v > 0) or not math.isfinite(v):
        raise InvalidArgumentError(f"{name} must be positive and finite, got {v}")
    return v


def _nonneg(name, v):
    v = float(v)
    if not (v >= 0) or not math.isfinite(v):
        raise InvalidArgumentError(f"{name} must be non-negative and finite, got {v}")
    return v


def vbeta_curve(c: float, beta: float = 0.0, tail: str = "upper", weak: bool = False) -> BoundCurve:
    """Bound under ``V_beta^{+} <= c`` (upper tail) or ``V_beta^{-} <= c`` (lower tail).

    Sharp form ``(c/b^2 + r/|b|) log(1 + |b| r / c) - r/|b|``; the weak form
    replaces it with ``r/(2|b|) log(1 + |b| r / c)``. Both reduce to
    ``r^2 / 2c`` at ``beta = 0``.
    """
    c = _pos("c", c)
    beta = float(beta)
    b = abs(beta)
    if tail not in ("upper", "lower"):
        raise InvalidArgumentError("tail must be 'upper' or 'lower'")

    def rate(r):
        # written as r^2 / 2c times a factor in (0, 1] so tiny |beta| cannot overflow
        gauss = r * r / (2 * c)
        if b == 0.0:
            return gauss
        x = b * r / c
        with np.errstate(invalid="ignore", divide="ignore"):
            if weak:
                fac = np.where(x < _SERIES_CUT, 1 - x / 2 + x * x / 3, np.log1p(x) / x)
            else:
                fac = np.where(x < _SERIES_CUT, 1 - x / 3 + x * x / 6, 2 * _bennett_h(x) / (x * x))
        return np.where(r > 0, gauss * fac, 0.0)

    kind = "weak" if weak else "sharp"
    return BoundCurve(f"{tail}_tail_Vbeta_{kind}", {"c": c, "beta": beta}, rate, tail)


def upper_tail_Vbeta(c, beta, r, weak=False):
    return vbeta_curve(c, beta, "upper", weak).evaluate(r)


def lower_tail_Vbeta(c, beta, r, weak=False):
    return vbeta_curve(c, beta, "lower", weak).evaluate(r)


def selfbound_curve(c: float, alpha: float, EF: float) -> BoundCurve:
    """Upper tail under ``V^+ <= c F^alpha``, ``0 <= alpha < 2``."""
    c = _pos("c", c)
    alpha = float(alpha)
    if not (0 <= alpha < 2):
        raise InvalidArgumentError("alpha must lie in [0, 2)")
    EF = _nonneg("EF", EF)
    p = 1 - alpha / 2

    def rate(r):
        if p == 1.0:
            return r * r / (2 * c)
        # (r+EF)^p - EF^p without cancellation for r << EF
        gap = EF ** p * np.expm1(p * np.log1p(r / EF)) if EF > 0 else r ** p
        return gap * gap / (2 * c)

    return BoundCurve("upper_tail_selfbound", {"c": c, "alpha": alpha, "EF": EF}, rate,
                      edge_count_rate=alpha >= 1.5)


def upper_tail_selfbound(c, alpha, EF, r):
    return selfbound_curve(c, alpha, EF).evaluate(r)


def linear_curve(a: float, b: float, EF: float) -> BoundCurve:
    """Upper tail under ``V^+ <= a F + b``."""
    a = _pos("a", a)
    b = _nonneg("b", b)
    EF = _nonneg("EF", EF)

    def rate(r):
        den = 2 * a * EF + 2 * b + a * r / 3
        return np.where(r > 0, r * r / np.where(r > 0, den, 1.0), 0.0)

    return BoundCurve("upper_tail_linear", {"a": a, "b": b, "EF": EF}, rate)


def upper_tail_linear(a, b, EF, r):
    return linear_curve(a, b, EF).evaluate(r)


def gaussian_lower_curve(EVminus: float, name: str = "lower_tail_gaussian") -> BoundCurve:
    """``exp(-r^2 / (2 E V^-))``; for U-statistics pass ``k^2 V``."""
    v = _pos("EVminus", EVminus)
    return BoundCurve(name, {"EVminus": v}, lambda r: r * r / (2 * v), "lower")


def lower_tail_gaussian(EVminus, r):
    return gaussian_lower_curve(EVminus).evaluate(r)


def selfbound_lower_curve(a: float, EF: float) -> BoundCurve:
    """Lower tail under ``V^+ <= a F``.

    With ``EF = 0`` the rate is infinite for ``r > 0`` (the bound is 0): a
    non-negative functional with zero mean cannot fall below ``-r``.
    """
    a = _pos("a", a)
    EF = _nonneg("EF", EF)
    den = 2 * max(a, 1.0) * EF

    def rate(r):
        if den == 0:
            return np.where(r > 0, np.inf, 0.0)
        return r * r / den

    return BoundCurve("lower_tail_selfbound", {"a": a, "EF": EF}, rate, "lower")


def lower_tail_selfbound(a, EF, r):
    return selfbound_lower_curve(a, EF).evaluate(r)


# --------------------------------------------------------------------------- edge counts


def geometric_constant_D(p: int) -> float:
    p = _check_p(p)
    return 4 * math.sqrt(2) / 3 * p + math.sqrt(32 * p * p / 9 + 4 * p - 1)


def edge_constant(p: int) -> float:
    """Constant ``c`` with ``sum deg^2 <= c N^{3/2}`` for disk graphs."""
    p = _check_p(p)
    return (8 * math.sqrt(2) / 3 + 4 / geometric_constant_D(p)) * p


def _check_p(p):
    if isinstance(p, bool) or int(p) != p or int(p) < 1:
        raise InvalidArgumentError(f"partition count must be a positive integer, got {p}")
    return int(p)


def edge_upper_curve(c_geom: float, EN: float) -> BoundCurve:
    """Upper tail of the edge count from ``sum deg^2 <= c N^{3/2}``."""
    cur = selfbound_curve(c_geom, 1.5, EN)
    return BoundCurve("edge_upper_tail", {"c_geom": cur.parameters["c"], "EN": EN},
                      cur.rate_fn, "upper", edge_count_rate=True)


def edge_upper_tail(c_geom, EN, r):
    return edge_upper_curve(c_geom, EN).evaluate(r)


def edge_lower_curve(v_frak: float) -> BoundCurve:
    cur = gaussian_lower_curve(v_frak)
    return BoundCurve("edge_lower_tail", {"v_frak": cur.parameters["EVminus"]},
                      cur.rate_fn, "lower")


def edge_lower_tail(v_frak, r):
    return edge_lower_curve(v_frak).evaluate(r)


def v_frak(K: float, EN: float) -> float:
    """``2 (K + 1) EN`` with ``K`` the supremum of ball masses."""
    return 2.0 * (_nonneg("K", K) + 1.0) * _nonneg("EN", EN)


# --------------------------------------------------------------------------- U-statistics


def chi(z):
    """``sqrt(log(z + 1)) z^{3/2} / (4 sqrt(z) + 8)``, zero at zero."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise InvalidArgumentError("chi is defined for z >= 0")
    sz = np.sqrt(z)
    out = np.sqrt(np.log1p(z)) * z * sz / (4 * sz + 8)
    return out[()] if out.ndim == 0 else out


def herbst_sup(z: float) -> float:
    """``sup_{lam > 0} [lam z - exp(lam^2) + 1]``.

    The objective is strictly concave in ``lam``; its maximiser solves
    ``z = 2 lam exp(lam^2)``.
    """
    z = float(z)
    if z <= 0:
        return 0.0
    hi = math.sqrt(math.log(max(z, 1.0))) + 1.0
    lam = optimize.brentq(lambda t: 2 * t * math.exp(t * t) - z, 0.0, hi, xtol=1e-15, rtol=1e-15)
    return lam * z - math.expm1(lam * lam)


def ustat_curve(EG: float, EF: float, c: float, scale: float = 4.0,
                name: str = "ustat_upper_tail") -> BoundCurve:
    """Upper tail of a U-statistic controlled by a supremum functional ``G``.

    Rate ``EG * chi((sqrt(EF + r) - sqrt(EF)) / (sqrt(scale * c) * EG))``.
    """
    EG = _pos("EG", EG)
    EF = _nonneg("EF", EF)
    c = _pos("c", c)
    den = math.sqrt(scale * c) * EG

    def rate(r):
        gap = r / (np.sqrt(EF + r) + math.sqrt(EF)) if EF > 0 else np.sqrt(r)
        return EG * chi(gap / den)

    return BoundCurve(name, {"EG": EG, "EF": EF, "c": c, "scale": scale}, rate,
                      edge_count_rate=True)


def ustat_upper_tail(EG, EF, c, r):
    return ustat_curve(EG, EF, c).evaluate(r)


def length_power_curve(EG: float, EL: float, d: int, rho: float, alpha: float) -> BoundCurve:
    """Length-power functional of a disk graph; ``G`` is the max count over a ``2 rho`` grid."""
    if not (0 <= alpha <= 1):
        raise InvalidArgumentError("alpha must lie in [0, 1]")
    rho = _pos("rho", rho)
    cur = ustat_curve(EG, EL, 2.0 ** (d - 1) * rho ** alpha, 4.0, "length_power_upper_tail")
    cur.parameters.update(d=d, rho=rho, alpha=alpha)
    return cur


def variable_radius_curve(EG: float, EL: float, gamma: float) -> BoundCurve:
    """Total length of the decaying-radius intersection graph."""
    gamma = _pos("gamma", gamma)
    cur = ustat_curve(EG, EL, 3.0 ** gamma + 1.0, 2.0, "variable_radius_upper_tail")
    cur.parameters.update(gamma=gamma)
    return cur


def trivial_curve() -> BoundCurve:
    """``exp(-0) = 1`` everywhere; a harness self-test."""
    return BoundCurve("trivial", {}, lambda r: np.zeros_like(r), "upper")


# --------------------------------------------------------------------------- registry

CURVES: Dict[str, Callable[..., BoundCurve]] = {
    "upper_tail_Vbeta": lambda c, beta=0.0: vbeta_curve(c, beta, "upper"),
    "upper_tail_Vbeta_weak": lambda c, beta=0.0: vbeta_curve(c, beta, "upper", weak=True),
    "lower_tail_Vbeta": lambda c, beta=0.0: vbeta_curve(c, beta, "lower"),
    "lower_tail_Vbeta_weak": lambda c, beta=0.0: vbeta_curve(c, beta, "lower", weak=True),
    "upper_tail_selfbound": selfbound_curve,
    "upper_tail_linear": linear_curve,
    "lower_tail_gaussian": gaussian_lower_curve,
    "lower_tail_selfbound": selfbound_lower_curve,
    "edge_upper_tail": edge_upper_curve,
    "edge_lower_tail": edge_lower_curve,
    "ustat_upper_tail": ustat_curve,
    "length_power_upper_tail": length_power_curve,
    "variable_radius_upper_tail": variable_radius_curve,
    "trivial": trivial_curve,
}


def make_curve(name: str, **params) -> BoundCurve:
    try:
        ctor = CURVES[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown bound curve {name!r}; known: {sorted(CURVES)}") from None
    try:
        return ctor(**params)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for {name}: {exc}") from None


# --------------------------------------------------------------------------- rates

RATE_LIMIT = 1 / math.sqrt(2)


@dataclass
class RateReport:
    curve: str
    checked: bool
    r_grid: Optional[np.ndarray] = None
    ratios: Optional[np.ndarray] = None
    limsup_estimate: float = float("nan")
    message: str = ""

    @property
    def passed(self) -> bool:
        return (not self.checked) or self.limsup_estimate <= RATE_LIMIT + 0.01


def rate_asymptotics(curve: BoundCurve, r_max: float = 1e12, n_points: int = 200,
                     r_min: float = 10.0) -> RateReport:
    """Ratio ``I(r) / (sqrt(r) log r)`` on a geometric grid up to ``r_max``.

    Only upper-tail curves whose hypotheses can hold for disk-graph edge counts
    are subject to the universal ``1/sqrt(2)`` ceiling; other curves are
    reported as skipped. ``limsup_estimate`` is the maximum over the top
    decade of the grid.
    """
    if curve.tail != "upper":
        return RateReport(curve.name, False, message="not-an-upper-tail curve; check skipped")
    if not curve.edge_count_rate:
        return RateReport(curve.name, False,
                          message="hypothesis cannot hold for edge counts; check skipped")
    r = np.geomspace(r_min, r_max, n_points)
    I = curve.rate(r)
    if np.any(~np.isfinite(I)):
        raise InvalidArgumentError("curve rate is not finite on the grid")
    ratios = I / (np.sqrt(r) * np.log(r))
    top = r >= r_max / 10
    return RateReport(curve.name, True, r, ratios, float(ratios[top].max()))
