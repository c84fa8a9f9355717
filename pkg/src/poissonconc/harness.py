"""Monte Carlo experiments: tail certification and the named scaling studies."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize
from scipy.spatial import cKDTree

from . import bounds as B
from .errors import ConfigurationError, InvalidArgumentError
from .graph import (
    DiskGraph,
    IntersectionGraph,
    build_graph,
    edge_count,
    half_ball_partition,
    length_power,
    sup_cell_count,
    sup_weighted_ball_count,
    total_length,
)
from .integrate import unit_sphere_area
from .model import (
    HomogeneousBox,
    HomogeneousTorus,
    IntensityModel,
    PointConfiguration,
    Window,
    edge_count_mean,
    model_from_dict,
)
from .sampler import SeedSpec, sample, sample_points
from .stats import clopper_pearson_upper, mean_and_se
from .ustat import EdgeIndicator, KernelSpec, LengthPower, add_one_cost, variance_decomposition

SCHEMA_VERSION = 1
ESTIMATION_STREAM = 2
CSV_COLUMNS = ("r", "n_exceed", "n_total", "empirical", "cp_upper_99", "bound", "pass")


# --------------------------------------------------------------------------- functionals

FUNCTIONAL_NAMES = ("edge_count", "length_power", "variable_radius_length", "sup_cell_count")


def _metric(model: IntensityModel):
    return model.window if model.periodic else None


def evaluate_functional(functional: Union[dict, Callable], config: PointConfiguration,
                        model: IntensityModel) -> float:
    """Value of a named functional (or a callable ``f(config)``) on one sample."""
    if callable(functional):
        return float(functional(config))
    name = functional["name"]
    if name == "edge_count":
        return float(edge_count(build_graph(config, DiskGraph(functional["rho"]), _metric(model))))
    if name == "length_power":
        g = build_graph(config, DiskGraph(functional["rho"]), _metric(model))
        return length_power(g, functional.get("alpha", 1.0))
    if name == "variable_radius_length":
        return total_length(build_graph(config, IntersectionGraph(functional["gamma"])))
    if name == "sup_cell_count":
        return float(sup_cell_count(config, functional["rho"]))
    raise ConfigurationError(f"unknown functional {name!r}; known: {FUNCTIONAL_NAMES}")


def _check_functional(functional, model):
    if callable(functional):
        return
    if not isinstance(functional, dict) or "name" not in functional:
        raise ConfigurationError("functional must be a dict with a 'name' or a callable")
    name = functional["name"]
    need = {"edge_count": ("rho",), "length_power": ("rho",), "sup_cell_count": ("rho",),
            "variable_radius_length": ("gamma",)}
    if name not in need:
        raise ConfigurationError(f"unknown functional {name!r}; known: {FUNCTIONAL_NAMES}")
    for key in need[name]:
        if key not in functional:
            raise ConfigurationError(f"functional {name} needs parameter {key!r}")
    if name == "variable_radius_length" and model.periodic:
        raise ConfigurationError("the decaying-radius graph is not defined on a torus")


def functional_mean(functional: dict, model: IntensityModel) -> Optional[float]:
    """Closed-form mean when one is available, else ``None``."""
    if callable(functional):
        return None
    name = functional["name"]
    if name == "edge_count":
        return edge_count_mean(model, functional["rho"])
    if name == "length_power" and isinstance(model, HomogeneousTorus):
        rho, a, d = functional["rho"], functional.get("alpha", 1.0), model.dimension
        model.check_radius(rho)
        t = model.rate
        return 0.5 * t * t * model.window.volume * unit_sphere_area(d) * rho ** (d + a) / (d + a)
    return None


# --------------------------------------------------------------------------- spec


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one tail experiment.

    ``bound`` is ``{"curve": name, "params": {...}}``; a parameter given as
    ``"auto"`` is resolved analytically when possible and otherwise
    estimated on an independent substream, before any tail sampling.
    """

    name: str
    model: IntensityModel
    functional: Union[dict, Callable]
    bound: dict
    replications: int
    r_grid: Sequence[float]
    seed: int = 0
    output: Optional[str] = None
    estimation_replications: int = 2000

    def __post_init__(self):
        r = np.asarray(self.r_grid, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ConfigurationError("r_grid must be a non-empty list")
        if np.any(r < 0) or np.any(np.diff(r) <= 0):
            raise ConfigurationError("r_grid must be non-negative and strictly increasing")
        self.r_grid = [float(v) for v in r]
        if int(self.replications) < 1:
            raise ConfigurationError("replications must be positive")
        self.replications = int(self.replications)
        if not isinstance(self.bound, dict) or "curve" not in self.bound:
            raise ConfigurationError("bound must be a dict with a 'curve' entry")
        if self.bound["curve"] not in B.CURVES:
            raise ConfigurationError(f"unknown bound curve {self.bound['curve']!r}")
        _check_functional(self.functional, self.model)

    def to_dict(self) -> dict:
        if callable(self.functional):
            raise ConfigurationError("callable functionals cannot be serialized")
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model.to_dict(),
            "functional": dict(self.functional),
            "bound": {"curve": self.bound["curve"], "params": dict(self.bound.get("params", {}))},
            "replications": self.replications,
            "r_grid": list(self.r_grid),
            "seed": self.seed,
            "output": self.output,
            "estimation_replications": self.estimation_replications,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        try:
            return cls(
                name=data["name"],
                model=model_from_dict(data["model"]),
                functional=dict(data["functional"]),
                bound=dict(data["bound"]),
                replications=data["replications"],
                r_grid=data["r_grid"],
                seed=int(data.get("seed", 0)),
                output=data.get("output"),
                estimation_replications=int(data.get("estimation_replications", 2000)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"experiment spec is missing {exc}") from None

    def digest(self) -> str:
        """SHA-256 of the canonical spec; the output location is not part of it."""
        data = self.to_dict()
        data.pop("output")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        return ExperimentSpec.from_dict(json.load(fh))


def save_spec(spec: ExperimentSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------- parameter resolution


def _estimation_values(spec: ExperimentSpec, fn: Callable[[PointConfiguration], float]) -> float:
    vals = np.empty(spec.estimation_replications)
    for k in range(spec.estimation_replications):
        rng = SeedSpec(spec.seed, k).generator(stream=ESTIMATION_STREAM)
        cfg = PointConfiguration.from_points(sample_points(spec.model, rng), spec.model.dimension)
        vals[k] = fn(cfg)
    return float(vals.mean())


def sup_ball_mass(model: IntensityModel, rho: float) -> float:
    """``sup_x mu(B(x, rho))`` for homogeneous models."""
    if isinstance(model, HomogeneousTorus):
        return model.ball_mass(model.window.lo, rho)
    if isinstance(model, HomogeneousBox):
        # symmetric and log-concave: the centred ball is the largest
        return model.ball_mass(0.5 * (model.window.lo + model.window.hi), rho)
    raise ConfigurationError("K has no closed form for this model; pass it explicitly")


def _mean_of(spec: ExperimentSpec) -> float:
    mean = functional_mean(spec.functional, spec.model)
    if mean is None:
        mean = _estimation_values(spec, lambda c: evaluate_functional(spec.functional, c, spec.model))
    return mean


def resolve_parameters(spec: ExperimentSpec) -> dict:
    """Bind every ``"auto"`` bound parameter; raises ``ConfigurationError`` otherwise."""
    params = dict(spec.bound.get("params", {}))
    fn = spec.functional if isinstance(spec.functional, dict) else {}
    model = spec.model
    d = model.dimension
    cache: Dict[str, float] = {}

    def mean():
        if "mean" not in cache:
            cache["mean"] = _mean_of(spec)
        return cache["mean"]

    def auto(key):
        if key in ("EN", "EF", "EL"):
            return mean()
        if key == "c_geom":
            return B.edge_constant(half_ball_partition(d, verify=False).count)
        if key in ("d",):
            return d
        if key in ("rho", "alpha", "gamma") and key in fn:
            return fn[key]
        if key == "alpha" and fn.get("name") == "length_power":
            return 1.0
        if key == "v_frak" and "rho" in fn:
            return B.v_frak(sup_ball_mass(model, fn["rho"]), mean())
        if key == "EVminus" and fn.get("name") in ("edge_count", "length_power"):
            kern = EdgeIndicator(fn["rho"], model.window) if fn["name"] == "edge_count" else \
                LengthPower(fn["rho"], fn.get("alpha", 1.0), model.window)
            return variance_decomposition(kern, model).k2V
        if key == "EG" and fn.get("name") == "length_power":
            return _estimation_values(spec, lambda c: sup_cell_count(c, fn["rho"]))
        if key == "EG" and fn.get("name") == "variable_radius_length":
            return _estimation_values(spec, lambda c: sup_weighted_ball_count(c, fn["gamma"]).upper)
        raise ConfigurationError(f"cannot resolve bound parameter {key!r} for {spec.bound['curve']}")

    for key, v in list(params.items()):
        if isinstance(v, str):
            if v != "auto":
                raise ConfigurationError(f"parameter {key} must be a number or 'auto'")
            params[key] = auto(key)
    return params


def make_bound(spec: ExperimentSpec):
    params = resolve_parameters(spec)
    try:
        return B.make_curve(spec.bound["curve"], **params), params
    except InvalidArgumentError as exc:
        raise ConfigurationError(str(exc)) from None


# --------------------------------------------------------------------------- tail experiments


@dataclass
class TailRow:
    r: float
    n_exceed: int
    n_total: int
    empirical: float
    cp_upper_99: float
    bound: float
    resolved: bool

    @property
    def passed(self) -> bool:
        return self.cp_upper_99 <= self.bound or self.n_exceed == 0


@dataclass
class TailReport:
    name: str
    rows: List[TailRow]
    center: float
    tail: str
    bound_name: str
    parameters: dict
    values_mean: float = float("nan")

    @property
    def violations(self) -> int:
        return sum(not row.passed for row in self.rows)

    @property
    def min_slack(self) -> float:
        s = [row.bound - row.cp_upper_99 for row in self.rows if row.n_exceed > 0]
        return min(s) if s else math.inf

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([repr(row.r), row.n_exceed, row.n_total, repr(row.empirical),
                        repr(row.cp_upper_99), repr(row.bound), int(row.passed)])
        return buf.getvalue()

    def summary(self) -> str:
        unresolved = sum(not row.resolved for row in self.rows)
        lines = [
            f"experiment: {self.name}",
            f"bound: {self.bound_name} ({self.tail} tail)",
            f"parameters: {json.dumps(self.parameters, sort_keys=True)}",
            f"center (E F): {self.center!r}",
            f"sample mean: {self.values_mean!r}",
            f"rows: {len(self.rows)}  violations: {self.violations}  unresolved: {unresolved}",
            f"min slack: {self.min_slack!r}",
            "status: " + ("PASS" if self.passed else "FAIL"),
        ]
        return "\n".join(lines) + "\n"


def _values_chunk(args):
    model, functional, seed, start, stop = args
    out = np.empty(stop - start)
    for k in range(start, stop):
        out[k - start] = evaluate_functional(functional, sample(model, SeedSpec(seed, k)), model)
    return out


def sample_functional(model, functional, seed: int, replications: int, workers: int = 1) -> np.ndarray:
    """Functional values for replications ``0..n-1``, merged in index order."""
    if workers <= 1 or replications < 2 * workers:
        return _values_chunk((model, functional, seed, 0, replications))
    edges = np.linspace(0, replications, 4 * workers + 1).astype(int)
    jobs = [(model, functional, seed, a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_values_chunk, jobs))
    return np.concatenate(parts)


def tail_rows(values: np.ndarray, center: float, curve, r_grid, tail: str) -> List[TailRow]:
    n = values.size
    zero_cp = clopper_pearson_upper(0, n)
    rows = []
    for r in r_grid:
        # small relative slack keeps integer functionals on the boundary inside the event
        eps = 1e-12 * max(1.0, abs(center))
        if tail == "upper":
            k = int(np.sum(values >= center + r - eps))
        else:
            k = int(np.sum(values <= center - r + eps))
        bound = float(curve.evaluate(r))
        rows.append(TailRow(float(r), k, n, k / n, clopper_pearson_upper(k, n), bound,
                            resolved=bound >= zero_cp))
    return rows


def run_tail_experiment(spec: ExperimentSpec, workers: int = 1, values: Optional[np.ndarray] = None,
                        curve=None) -> TailReport:
    """Certify a bound curve against the empirical tail of the functional.

    A row passes when the Clopper-Pearson 99% upper limit of the exceedance
    probability lies below the bound, or when no exceedance was observed.
    Rows whose bound is below what zero exceedances could certify are flagged
    as unresolved.
    """
    if curve is None:
        curve, params = make_bound(spec)
    else:
        params = dict(curve.parameters)
    center = functional_mean(spec.functional, spec.model)
    if center is None:
        center = next((params[k] for k in ("EN", "EF", "EL") if k in params), None)
    if center is None:
        center = _mean_of(spec)
    if values is None:
        values = sample_functional(spec.model, spec.functional, spec.seed, spec.replications, workers)
    rows = tail_rows(np.asarray(values, dtype=float), center, curve, spec.r_grid, curve.tail)
    report = TailReport(spec.name, rows, float(center), curve.tail, curve.name, params,
                        float(np.mean(values)))
    if spec.output:
        write_outputs(report, spec, spec.output)
    return report


def run_manifest(spec: ExperimentSpec) -> dict:
    import scipy

    from . import __version__

    return {
        "experiment": spec.name,
        "seed": spec.seed,
        "replications": spec.replications,
        "spec_sha256": spec.digest(),
        "schema_version": SCHEMA_VERSION,
        "versions": {
            "poissonconc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def write_outputs(report: TailReport, spec: ExperimentSpec, out) -> Dict[str, Path]:
    """Write ``<out>.csv``, ``<out>.summary.txt`` and ``<out>.manifest.json``."""
    base = Path(out)
    if base.suffix == ".csv":
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": base.with_suffix(".csv"),
        "summary": base.parent / (base.name + ".summary.txt"),
        "manifest": base.parent / (base.name + ".manifest.json"),
    }
    paths["csv"].write_text(report.to_csv())
    paths["summary"].write_text(report.summary())
    paths["manifest"].write_text(json.dumps(run_manifest(spec), indent=2, sort_keys=True) + "\n")
    return paths


# --------------------------------------------------------------------------- CLT consistency


@dataclass
class CLTReport:
    n_list: List[float]
    EN: List[float]
    VN: List[float]
    c_geom: float
    C: float
    C_star: List[float]
    x_n: List[float]

    @property
    def increasing(self) -> bool:
        return all(b > a for a, b in zip(self.x_n, self.x_n[1:]))

    @property
    def beta_ratios(self) -> List[float]:
        return [e / n ** 2 for e, n in zip(self.EN, self.n_list)]

    @property
    def alpha_ratios(self) -> List[float]:
        return [v / n ** 3 for v, n in zip(self.VN, self.n_list)]


def _gaussian_reach(curve, sd: float, C: float) -> float:
    """Largest ``x`` with ``I(r sd) >= C r^2`` on ``[0, x]``.

    ``I(s) / s^2`` is non-increasing for the edge upper-tail rate, so there is
    a single crossing.
    """
    def g(r):
        return float(curve.rate(r * sd)) - C * r * r

    lo = 1e-9
    if g(lo) < 0:
        return 0.0
    hi = 1.0
    while g(hi) >= 0:
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    return optimize.brentq(g, lo, hi, xtol=1e-12, rtol=1e-12)


def run_clt_consistency(base_model: IntensityModel, rho: float,
                        n_list: Sequence[float] = (1e2, 1e3, 1e4),
                        C: Optional[float] = None) -> CLTReport:
    """Range ``[0, x_n]`` on which the edge upper-tail bound is Gaussian at scale ``sqrt(Var N_n)``.

    Models are ``n * base_model``. Near zero the bound behaves like
    ``exp(-C*_n r^2)`` with ``C*_n = Var N_n / (32 c EN_n^{3/2})``; by default
    ``C`` is half the smallest ``C*_n``.
    """
    if not isinstance(base_model, (HomogeneousTorus, HomogeneousBox)):
        raise InvalidArgumentError("the CLT study needs a homogeneous base model")
    n_list = [float(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError("n_list must be increasing")
    c_geom = B.edge_constant(half_ball_partition(base_model.dimension, verify=False).count)
    EN, VN, cstar = [], [], []
    for n in n_list:
        m = base_model.scaled(n)
        en = edge_count_mean(m, rho)
        vn = variance_decomposition(EdgeIndicator(rho, m.window), m).variance
        EN.append(en)
        VN.append(vn)
        cstar.append(vn / (32.0 * c_geom * en ** 1.5))
    if C is None:
        C = 0.5 * min(cstar)
    if not C > 0:
        raise InvalidArgumentError("C must be positive")
    xs = [_gaussian_reach(B.edge_upper_curve(c_geom, en), math.sqrt(vn), C) for en, vn in zip(EN, VN)]
    return CLTReport(n_list, EN, VN, c_geom, float(C), cstar, xs)


# --------------------------------------------------------------------------- infinite edges


def radius_power_integral(gamma: float, d: int, power: float, R: float) -> float:
    """``int_{|x| <= R} (|x| + 1)^(-gamma * power) dx``."""
    a = gamma * power
    # quad on geometrically growing pieces; a single call loses the slow tail
    edges = [0.0] + [e for e in np.geomspace(1.0, R, max(2, int(math.log2(max(R, 2.0))) + 1))
                     if e < R] + [R]
    val = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, _ = integrate.quad(lambda s: s ** (d - 1) * (s + 1.0) ** (-a), lo, hi,
                              epsabs=0.0, epsrel=1e-11, limit=200)
        val += v
    return unit_sphere_area(d) * val


def integral_finite(gamma: float, d: int, power: float, decades: int = 8) -> dict:
    """Quadrature over growing balls with a divergence test on the last decade."""
    radii = [10.0 ** k for k in range(1, decades + 1)]
    vals = [radius_power_integral(gamma, d, power, R) for R in radii]
    rel = (vals[-1] - vals[-2]) / vals[-1]
    return {"radii": radii, "values": vals, "finite": rel < 1e-3, "last_relative_increment": rel}


@dataclass
class InfiniteEdgesReport:
    gamma: float
    dimension: int
    rate: float
    R_list: List[float]
    edge_mean: List[float]
    edge_se: List[float]
    length_mean: List[float]
    length_se: List[float]
    integral_d: dict
    integral_d1: dict
    length_tolerance: float

    @property
    def edges_increasing(self) -> bool:
        return all(b > a for a, b in zip(self.edge_mean, self.edge_mean[1:]))

    @property
    def edge_last_increment_fraction(self) -> float:
        return (self.edge_mean[-1] - self.edge_mean[-2]) / self.edge_mean[-1]

    @property
    def length_last_increment_fraction(self) -> float:
        return (self.length_mean[-1] - self.length_mean[-2]) / self.length_mean[-1]

    @property
    def edges_diverge(self) -> bool:
        return self.edges_increasing and self.edge_last_increment_fraction > 0.10

    @property
    def length_converges(self) -> bool:
        return self.length_last_increment_fraction < self.length_tolerance


def run_infinite_edges_experiment(gamma: float = 0.9, d: int = 2,
                                  R_list: Sequence[float] = (2, 4, 8, 16),
                                  replications: int = 1000, rate: float = 5.0, seed: int = 0,
                                  length_tolerance: float = 0.01) -> InfiniteEdgesReport:
    """Edge count and total length of the decaying-radius graph on growing windows.

    Each replication samples the largest window once and restricts it to the
    smaller ones, so the window sequence is coupled and increments are
    non-negative sample by sample.
    """
    if not (gamma * d <= d and gamma * (d + 1) > d):
        raise InvalidArgumentError(
            f"need gamma*d <= d and gamma*(d+1) > d (here {gamma * d:g} <= {d} and "
            f"{gamma * (d + 1):g} > {d}); outside this regime the experiment is not informative"
        )
    R_list = sorted(float(R) for R in R_list)
    Rmax = R_list[-1]
    big = HomogeneousBox(rate, Window.centered(Rmax, d))
    rule = IntersectionGraph(gamma)
    edges = np.zeros((replications, len(R_list)))
    lengths = np.zeros((replications, len(R_list)))
    for k in range(replications):
        cfg = sample(big, SeedSpec(seed, k))
        for j, R in enumerate(R_list):
            sub = cfg.restrict(Window.centered(R, d)) if R < Rmax else cfg
            g = build_graph(sub, rule)
            edges[k, j] = edge_count(g)
            lengths[k, j] = total_length(g)
    em = [mean_and_se(edges[:, j]) for j in range(len(R_list))]
    lm = [mean_and_se(lengths[:, j]) for j in range(len(R_list))]
    return InfiniteEdgesReport(
        gamma, d, rate, R_list, [m for m, _ in em], [s for _, s in em], [m for m, _ in lm],
        [s for _, s in lm], integral_finite(gamma, d, d), integral_finite(gamma, d, d + 1),
        length_tolerance,
    )


# --------------------------------------------------------------------------- Wu diagnostic


@dataclass
class WuReport:
    entropy_estimate: float
    rhs_estimate: float
    rhs_se: float
    gap: float
    replications: int
    closed_form: Optional[dict] = None
    warning: str = ("plug-in entropy estimates are biased at finite sample sizes; "
                    "this diagnostic does not certify anything")


def _grid_nodes(model: IntensityModel, per_axis: int):
    lo, hi = model.window.lo, model.window.hi
    d = model.dimension
    h = (hi - lo) / per_axis
    axes = [lo[i] + h[i] * (np.arange(per_axis) + 0.5) for i in range(d)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    return nodes, float(np.prod(h))


def wu_entropy_diagnostic(model: IntensityModel, functional, lam: float = 0.1,
                          replications: int = 2000, seed: int = 0, grid: int = 64) -> WuReport:
    """Compare ``Ent(e^{lam F})`` with ``E[e^{lam F} int psi(lam D_x F) dmu(x)]``.

    ``functional`` is ``{"name": "count", "lower": .., "upper": ..}`` (points in a
    sub-box), ``{"name": "constant"}``, ``{"name": "edge_count", "rho": ..}``, or
    an order-two geometric ``KernelSpec``. The inner integral uses a midpoint
    grid with ``grid`` nodes per axis.
    """
    if not lam > 0:
        raise InvalidArgumentError("lambda must be positive")
    nodes, cell = _grid_nodes(model, grid)
    dens = model.density(nodes) * cell
    F = np.empty(replications)
    inner = np.empty(replications)
    closed = None
    if isinstance(functional, dict) and functional.get("name") == "count":
        lo = np.asarray(functional["lower"], float)
        hi = np.asarray(functional["upper"], float)
        box = Window(lo, hi)
        m = HomogeneousBox(model.rate, box).total_mass() if isinstance(
            model, (HomogeneousBox, HomogeneousTorus)) else None
        ind = box.contains(nodes).astype(float)
        mass_in = float(np.sum(dens * ind)) if m is None else m
        for k in range(replications):
            cfg = sample(model, SeedSpec(seed, k))
            F[k] = float(cfg.multiplicities[box.contains(cfg.points)].sum()) if cfg.n_atoms else 0.0
            inner[k] = mass_in * float(B.psi(lam))
        if m is not None:
            M = math.exp(m * math.expm1(lam))
            closed = {"entropy": M * m * float(B.psi(lam)), "rhs": M * m * float(B.psi(lam))}
    elif isinstance(functional, dict) and functional.get("name") == "constant":
        F[:] = float(functional.get("value", 0.0))
        inner[:] = 0.0
        closed = {"entropy": 0.0, "rhs": 0.0}
    else:
        if isinstance(functional, dict) and functional.get("name") == "edge_count":
            kernel = EdgeIndicator(functional["rho"], model.window)
        elif isinstance(functional, KernelSpec):
            kernel = functional
        else:
            raise InvalidArgumentError("unsupported functional for the entropy diagnostic")
        from .ustat import evaluate

        for k in range(replications):
            cfg = sample(model, SeedSpec(seed, k))
            F[k] = evaluate(kernel, cfg)
            if isinstance(kernel, EdgeIndicator):
                D = _neighbour_counts(nodes, cfg, kernel.rho, model)
            else:
                D = np.array([add_one_cost(kernel, cfg, x) for x in nodes])
            inner[k] = float(np.sum(dens * B.psi(lam * D)))
    if lam * float(np.max(F)) > 700:
        raise InvalidArgumentError("exp(lambda F) overflows; use a smaller lambda")
    Y = np.exp(lam * F)
    EY = float(Y.mean())
    ent = float(np.mean(lam * F * Y)) - EY * math.log(EY)
    rhs_samples = Y * inner
    rhs, se = mean_and_se(rhs_samples) if replications > 1 else (float(rhs_samples[0]), 0.0)
    return WuReport(ent, rhs, se, rhs - ent, replications, closed)


def _neighbour_counts(nodes, cfg, rho, model):
    if cfg.n_atoms == 0:
        return np.zeros(len(nodes))
    if model.periodic:
        lo, side = model.window.lo, model.window.sides
        tree = cKDTree(np.mod(cfg.points - lo, side), boxsize=side)
        q = np.mod(nodes - lo, side)
    else:
        tree = cKDTree(cfg.points)
        q = nodes
    return tree.query_ball_point(q, rho, return_length=True).astype(float)
