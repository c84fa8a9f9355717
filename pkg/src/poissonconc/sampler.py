"""Reproducible Poisson process sampling and Mecke-formula checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import EnvelopeTooLooseError, InvalidArgumentError
from .model import (
    HomogeneousBox,
    HomogeneousTorus,
    IntensityModel,
    PointConfiguration,
    RadialDensity,
    edge_count_mean,
)

MIN_ACCEPTANCE = 1e-4
_UINT64 = 2 ** 64


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one independent random substream.

    The stream is ``Philox`` keyed by ``SeedSequence(master_seed, spawn_key=(index,))``,
    so any replication can be regenerated without touching the others.
    """

    master_seed: int
    replication_index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < _UINT64):
            raise InvalidArgumentError("master_seed must be a 64-bit unsigned integer")
        if int(self.replication_index) < 0:
            raise InvalidArgumentError("replication_index must be non-negative")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "replication_index", int(self.replication_index))

    def generator(self, stream: int = 0) -> np.random.Generator:
        """Generator for this replication; ``stream`` separates auxiliary uses."""
        key = (self.replication_index,) if stream == 0 else (self.replication_index, stream)
        ss = np.random.SeedSequence(self.master_seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, index)


def _as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(int(seed), 0)


def sample_points(model: IntensityModel, rng: np.random.Generator) -> np.ndarray:
    """Raw ``(n, d)`` array of a Poisson sample drawn with ``rng``."""
    d = model.dimension
    mass = model.total_mass()
    if not math.isfinite(mass):
        raise InvalidArgumentError("sampling requires finite total mass")
    n = int(rng.poisson(mass)) if mass > 0 else 0
    if n == 0:
        return np.empty((0, d))
    lo, hi = model.window.lo, model.window.hi
    if isinstance(model, (HomogeneousBox, HomogeneousTorus)):
        return lo + (hi - lo) * rng.random((n, d))
    # rejection against the constant envelope max density on the window
    envelope = model.max_density() * model.window.volume
    acc = mass / envelope
    if acc < MIN_ACCEPTANCE:
        raise EnvelopeTooLooseError(acc)
    out = []
    need = n
    fmax = model.max_density()
    while need > 0:
        m = int(need / acc * 1.1) + 16
        cand = lo + (hi - lo) * rng.random((m, d))
        keep = rng.random(m) * fmax <= model.density(cand)
        got = cand[keep][:need]
        out.append(got)
        need -= len(got)
    return np.vstack(out)


def sample(model: IntensityModel, seed: Union[SeedSpec, int]) -> PointConfiguration:
    """One Poisson process realisation as a (simple) configuration."""
    rng = _as_seed(seed).generator()
    pts = sample_points(model, rng)
    # ties have probability zero but are merged rather than rejected
    return PointConfiguration.from_points(pts, model.dimension)


def sample_counts(model: IntensityModel, master_seed: int, replications: int, start: int = 0):
    """Yield ``(index, configuration)`` for consecutive replication indices."""
    for k in range(start, start + replications):
        yield k, sample(model, SeedSpec(master_seed, k))


# --------------------------------------------------------------------------- Mecke checks


@dataclass
class MeckeReport:
    functional: str
    lhs_estimate: float
    rhs_value: float
    standard_error: float
    rhs_exact: bool
    replications: int

    @property
    def pass_(self) -> bool:
        return abs(self.lhs_estimate - self.rhs_value) <= 3 * self.standard_error

    @property
    def passed(self) -> bool:
        return self.pass_


def _neighbor_counts(cfg: PointConfiguration, model: IntensityModel, rho: float) -> np.ndarray:
    from .graph import DiskGraph, build_graph

    g = build_graph(cfg, DiskGraph(rho), model.window if model.periodic else None)
    return g.degrees()


def mecke_check(model: IntensityModel, functional: Union[str, Callable] = "one",
                replications: int = 10 ** 4, seed: Union[SeedSpec, int] = 0,
                rho: float = 0.1, inner_replications: int = 1) -> MeckeReport:
    """Monte Carlo check of ``E sum_{x in eta} h(x, eta) = int E h(x, eta + delta_x) dmu(x)``.

    Named functionals: ``"one"`` (h = 1), ``"count_minus_one"``
    (h(x, xi) = xi(X) - 1) and ``"neighbors"`` (number of other points within
    ``rho``). Their right-hand sides are closed forms. A callable
    ``h(x, config) -> float`` gets a nested Monte Carlo right-hand side: outer
    points from the normalised intensity, a fresh process for each.
    """
    if replications < 2:
        raise InvalidArgumentError("need at least two replications")
    base = _as_seed(seed)
    mass = model.total_mass()
    lhs = np.empty(replications)
    for k in range(replications):
        cfg = sample(model, SeedSpec(base.master_seed, k))
        n = cfg.total
        if functional == "one":
            lhs[k] = n
        elif functional == "count_minus_one":
            lhs[k] = n * (n - 1)
        elif functional == "neighbors":
            lhs[k] = float(_neighbor_counts(cfg, model, rho).sum()) if n > 1 else 0.0
        elif callable(functional):
            lhs[k] = sum(float(functional(x, cfg)) * m for x, m in zip(cfg.points, cfg.multiplicities))
        else:
            raise InvalidArgumentError(f"unknown functional {functional!r}")
    lhs_mean = float(lhs.mean())
    se_l = float(lhs.std(ddof=1) / math.sqrt(replications))
    name = functional if isinstance(functional, str) else getattr(functional, "__name__", "custom")
    if functional == "one":
        return MeckeReport(name, lhs_mean, mass, se_l, True, replications)
    if functional == "count_minus_one":
        return MeckeReport(name, lhs_mean, mass * mass, se_l, True, replications)
    if functional == "neighbors":
        return MeckeReport(name, lhs_mean, 2.0 * edge_count_mean(model, rho), se_l, True, replications)
    # nested Monte Carlo on an independent stream
    rhs = np.empty(replications)
    for k in range(replications):
        rng = SeedSpec(base.master_seed, k).generator(stream=1)
        x = sample_points_normalized(model, rng, 1)[0]
        acc = 0.0
        for _ in range(inner_replications):
            cfg = PointConfiguration.from_points(
                np.vstack([sample_points(model, rng), x[None, :]]), model.dimension
            )
            acc += float(functional(x, cfg))
        rhs[k] = mass * acc / inner_replications
    se_r = float(rhs.std(ddof=1) / math.sqrt(replications))
    return MeckeReport(name, lhs_mean, float(rhs.mean()), math.hypot(se_l, se_r), False, replications)


def sample_points_normalized(model: IntensityModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. points from ``mu / mu(X)``."""
    d = model.dimension
    lo, hi = model.window.lo, model.window.hi
    if isinstance(model, (HomogeneousBox, HomogeneousTorus)):
        return lo + (hi - lo) * rng.random((n, d))
    fmax = model.max_density()
    out, need = [], n
    while need > 0:
        m = 4 * need + 16
        cand = lo + (hi - lo) * rng.random((m, d))
        got = cand[rng.random(m) * fmax <= model.density(cand)][:need]
        out.append(got)
        need -= len(got)
    return np.vstack(out)
