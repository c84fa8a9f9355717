"""Command line entry point ``poissonconc``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import List, Optional

import numpy as np

from . import bounds as B
from .convex import ConvexDistanceProblem, ThresholdEvent, check_dt_properties, convex_distance
from .errors import PoissonConcError
from .graph import (
    DiskGraph,
    IntersectionGraph,
    build_graph,
    check_edge_inequalities,
    degree_square_sum,
    edge_count,
    length_power,
    sup_cell_count,
    sup_weighted_ball_count,
    total_length,
    triangle_count,
)
from .harness import (
    load_spec,
    run_clt_consistency,
    run_infinite_edges_experiment,
    run_tail_experiment,
    write_outputs,
)
from .model import PointConfiguration, Window, load_model, model_from_dict
from .sampler import SeedSpec, sample
from .ustat import evaluate, local_versions, make_kernel, v_statistics, variance_decomposition


def _model_from_args(args):
    if args.model:
        return load_model(args.model)
    d = args.dim
    variant = {"torus": "homogeneous_torus", "box": "homogeneous_box", "radial": "radial_density"}[args.variant]
    lo = [0.0] * d if args.variant != "radial" else [-args.side / 2] * d
    hi = [args.side] * d if args.variant != "radial" else [args.side / 2] * d
    cfg = {"variant": variant, "rate": args.rate,
           "window": {"lower": lo, "upper": hi, "periodic": args.variant == "torus"},
           "exponent": args.exponent}
    return model_from_dict(cfg)


def _add_model_args(p):
    p.add_argument("--model", help="JSON model file (overrides the inline options)")
    p.add_argument("--variant", choices=["torus", "box", "radial"], default="torus")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--side", type=float, default=1.0, help="window side length")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--exponent", type=float, default=2.0, help="radial density exponent q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0, help="replication index of the substream")


def _write_rows(out, header, rows):
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    finally:
        if out:
            fh.close()


def cmd_sample(args):
    model = _model_from_args(args)
    rows = []
    dim = model.dimension
    for rep in range(args.replication, args.replication + args.replications):
        cfg = sample(model, SeedSpec(args.seed, rep))
        for i, x in enumerate(cfg.expanded()):
            rows.append([rep, i] + [repr(float(v)) for v in x])
    _write_rows(args.out, ["replication", "point_index"] + [f"x_{i + 1}" for i in range(dim)], rows)
    return 0


def read_points_csv(path) -> PointConfiguration:
    """Points from a CSV whose coordinate columns are named ``x_1, x_2, ...``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise SystemExit(f"{path}: no points")
    cols = sorted((c for c in rows[0] if c.startswith("x_")), key=lambda c: int(c[2:]))
    if not cols:
        raise SystemExit(f"{path}: no x_1.. columns")
    return PointConfiguration(np.array([[float(r[c]) for c in cols] for r in rows]))


def cmd_graph_stats(args):
    if args.points:
        cfg = read_points_csv(args.points)
        metric = None
    else:
        model = _model_from_args(args)
        cfg = sample(model, SeedSpec(args.seed, args.replication))
        metric = model.window if model.periodic else None
    alphas = [float(a) for a in args.alpha.split(",")] if args.alpha else []
    if args.gamma is not None:
        g = build_graph(cfg, IntersectionGraph(args.gamma))
        br = sup_weighted_ball_count(cfg, args.gamma)
        stats = {"points": cfg.total, "N": edge_count(g), "total_length": total_length(g),
                 "G_lower": br.lower, "G_upper": br.upper}
    else:
        g = build_graph(cfg, DiskGraph(args.rho), metric)
        rep = check_edge_inequalities(g, partition_count=args.partition_count, seed=args.seed)
        stats = {"points": cfg.total, "N": rep.n_edges, "T": triangle_count(g),
                 "degree_square_sum": degree_square_sum(g)}
        for a in alphas:
            stats[f"L_{a:g}"] = length_power(g, a)
        stats["G"] = sup_cell_count(cfg, args.rho)
        stats["inequalities_ok"] = rep.ok
    _write_rows(args.out, list(stats), [[v if not isinstance(v, float) else repr(v) for v in stats.values()]])
    return 0


def cmd_ustat(args):
    model = _model_from_args(args)
    params = {"rho": args.rho, "alpha": args.alpha, "gamma": args.gamma}
    params = {k: v for k, v in params.items() if v is not None}
    kernel = make_kernel(args.kernel, model.window, **params)
    cfg = sample(model, SeedSpec(args.seed, args.replication))
    print(f"value,{evaluate(kernel, cfg)!r}")
    if args.local:
        for i, v in enumerate(local_versions(kernel, cfg)):
            print(f"local_{i},{float(v)!r}")
    if args.vstats:
        vs = v_statistics(kernel, cfg, model)
        print(f"V_plus,{vs.v_plus!r}")
        print(f"V_minus,{vs.v_minus!r}")
    if args.moments:
        dec = variance_decomposition(kernel, model)
        for i, n in enumerate(dec.norms, start=1):
            print(f"norm_f{i},{n!r}")
        print(f"variance,{dec.variance!r}")
        print(f"V,{dec.V!r}")
        print(f"k2V,{dec.k2V!r}")
    return 0


def _parse_params(items: List[str]) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"bad parameter {item!r}; use key=value")
        k, v = item.split("=", 1)
        out[k] = float(v)
    return out


def cmd_bound(args):
    params = _parse_params(args.param)
    if "d" in params:
        params["d"] = int(params["d"])
    curve = B.make_curve(args.curve, **params)
    if args.r:
        r = np.array([float(v) for v in args.r.split(",")])
    elif args.log:
        r = np.geomspace(args.r_min, args.r_max, args.n)
    else:
        r = np.linspace(args.r_min, args.r_max, args.n)
    rates = np.atleast_1d(curve.rate(r))
    vals = np.exp(-rates)
    _write_rows(args.out, ["r", "I_r", "bound"],
                [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(r, rates, vals)])
    return 0


def _config_from(d: dict, dim: Optional[int] = None) -> PointConfiguration:
    pts = np.asarray(d.get("points", []), dtype=float)
    if pts.size == 0:
        return PointConfiguration.empty(dim or 2)
    mult = d.get("multiplicities")
    return PointConfiguration(pts, mult)


def load_instance(path):
    """Instance file: ``points``, ``multiplicities`` and an ``event``.

    Events are ``{"type": "threshold", "m": int, "window": {...}}`` or
    ``{"type": "finite", "configurations": [{"points": ..., "multiplicities": ...}, ...]}``.
    """
    with open(path) as fh:
        data = json.load(fh)
    xi = _config_from(data)
    ev = data["event"]
    if ev.get("type") == "threshold":
        win = ev.get("window")
        window = None if win is None else Window(tuple(win["lower"]), tuple(win["upper"]))
        event = ThresholdEvent(int(ev["m"]), window)
    elif ev.get("type") == "finite":
        event = [_config_from(c, xi.dimension) for c in ev["configurations"]]
    else:
        raise SystemExit("event type must be 'threshold' or 'finite'")
    return ConvexDistanceProblem(xi, event)


def cmd_convex_distance(args):
    problem = load_instance(args.instance)
    res = convex_distance(problem, args.tolerance)
    print(f"value,{res.value!r}")
    print(f"lower_bound,{res.lower_bound!r}")
    print("u," + ";".join(repr(float(v)) for v in res.optimal_u))
    for prof, wt in res.optimal_mixture:
        print("mixture," + ";".join(str(v) for v in prof.values) + f",{wt!r}")
    if args.check:
        rep = check_dt_properties(problem, tolerance=args.tolerance, raise_on_failure=False)
        print(f"V_plus,{rep.v_plus!r}")
        print(f"V_plus_squared,{rep.v_plus_squared!r}")
        print(f"properties_ok,{rep.passed}")
    return 0


def cmd_experiment(args):
    if args.named == "clt-consistency":
        from .model import HomogeneousTorus

        rep = run_clt_consistency(HomogeneousTorus(1.0, Window.unit(2, periodic=True)), args.rho)
        _write_rows(args.out, ["n", "EN", "VN", "C_star", "x_n"],
                    [[repr(n), repr(e), repr(v), repr(c), repr(x)]
                     for n, e, v, c, x in zip(rep.n_list, rep.EN, rep.VN, rep.C_star, rep.x_n)])
        print(f"C,{rep.C!r}\nincreasing,{rep.increasing}", file=sys.stderr)
        return 0 if rep.increasing else 1
    if args.named == "infinite-edges":
        rep = run_infinite_edges_experiment(replications=args.replications or 1000,
                                            seed=args.seed or 0)
        _write_rows(args.out, ["R", "edge_mean", "edge_se", "length_mean", "length_se"],
                    [[repr(R), repr(a), repr(b), repr(c), repr(e)] for R, a, b, c, e in
                     zip(rep.R_list, rep.edge_mean, rep.edge_se, rep.length_mean, rep.length_se)])
        return 0
    if not args.spec:
        raise SystemExit("experiment needs a spec file or --named")
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.replications is not None:
        spec.replications = args.replications
    spec.output = None
    report = run_tail_experiment(spec, workers=args.workers)
    if args.out:
        paths = write_outputs(report, spec, args.out)
        print(paths["csv"])
    else:
        sys.stdout.write(report.to_csv())
    sys.stderr.write(report.summary())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poissonconc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw Poisson samples and print their points")
    _add_model_args(p)
    p.add_argument("--replications", type=int, default=1, help="number of consecutive replications")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("graph-stats", help="edge, triangle and degree statistics of one sample")
    _add_model_args(p)
    p.add_argument("--points", help="CSV of points (columns x_1..x_d) instead of sampling")
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--gamma", type=float, help="use the decaying-radius graph instead")
    p.add_argument("--alpha", help="comma separated exponents for the length power sums")
    p.add_argument("--out")
    p.add_argument("--partition-count", type=int, default=3)
    p.set_defaults(func=cmd_graph_stats)

    p = sub.add_parser("ustat", help="evaluate a U-statistic and its variance decomposition")
    _add_model_args(p)
    p.add_argument("--kernel", default="edge_indicator",
                   choices=["edge_indicator", "length_power", "variable_radius_length"])
    p.add_argument("--rho", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--local", action="store_true", help="also print the local versions")
    p.add_argument("--vstats", action="store_true", help="also print V+ and V-")
    p.add_argument("--moments", action="store_true", help="also print norms, variance and V")
    p.set_defaults(func=cmd_ustat)

    p = sub.add_parser("bound", help="tabulate a tail bound curve")
    p.add_argument("curve", choices=sorted(B.CURVES))
    p.add_argument("--param", action="append", help="key=value, repeatable")
    p.add_argument("--r", help="comma separated r values")
    p.add_argument("--r-min", type=float, default=0.0)
    p.add_argument("--r-max", type=float, default=100.0)
    p.add_argument("--n", type=int, default=11)
    p.add_argument("--log", action="store_true", help="geometric grid")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("convex-distance", help="convex distance of an instance file")
    p.add_argument("instance")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--check", action="store_true", help="run the structural property checks")
    p.set_defaults(func=cmd_convex_distance)

    p = sub.add_parser("experiment", help="run a tail-certification spec or a named study")
    p.add_argument("spec", nargs="?")
    p.add_argument("--named", choices=["clt-consistency", "infinite-edges"])
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PoissonConcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
