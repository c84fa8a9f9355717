import csv
import io
import json
import math

import numpy as np
import pytest

from poissonconc import HomogeneousTorus, SeedSpec, Window, sample
from poissonconc.cli import main
from poissonconc.harness import ExperimentSpec, save_spec


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sample_is_seeded_and_matches_library(capsys):
    assert main(["sample", "--rate", "50", "--seed", "4", "--replications", "2"]) == 0
    rows = _rows(capsys.readouterr().out)
    model = HomogeneousTorus(50.0, Window.unit(2, periodic=True))
    want = np.vstack([sample(model, SeedSpec(4, k)).expanded()
                      for k in range(2)])
    got = np.array([[float(r["x_1"]), float(r["x_2"])] for r in rows])
    assert np.array_equal(got, want)
    assert {r["replication"] for r in rows} <= {"0", "1"}


def test_graph_stats_from_points_file(tmp_path, capsys, triangle):
    path = tmp_path / "pts.csv"
    path.write_text("x_1,x_2\n" + "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in triangle.points))
    assert main(["graph-stats", "--points", str(path), "--rho", "0.1", "--alpha", "0,1"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert row["N"] == "3" and row["T"] == "1" and row["degree_square_sum"] == "12"
    assert row["inequalities_ok"] == "True"
    d = np.linalg.norm(triangle.points[:, None] - triangle.points[None], axis=-1)
    assert float(row["L_1"]) == pytest.approx(d[np.triu_indices(3, 1)].sum())
    assert float(row["L_0"]) == 3.0


def test_graph_stats_sampled_and_gamma(capsys):
    assert main(["graph-stats", "--rate", "80", "--rho", "0.1", "--seed", "1"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert int(row["N"]) > 0 and row["inequalities_ok"] == "True"
    assert main(["graph-stats", "--variant", "box", "--side", "4", "--rate", "2", "--gamma", "0.9"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert float(row["G_lower"]) <= float(row["G_upper"])


def test_ustat_outputs(capsys):
    assert main(["ustat", "--rate", "100", "--rho", "0.1", "--moments"]) == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    assert float(out["norm_f1"]) == pytest.approx(986.96, rel=1e-4)
    assert float(out["variance"]) == pytest.approx(1144.04, rel=1e-5)
    assert main(["ustat", "--rate", "30", "--rho", "0.1", "--local", "--vstats"]) == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    locals_ = [float(v) for k, v in out.items() if k.startswith("local_")]
    assert sum(locals_) == pytest.approx(float(out["value"]))
    # V+ = k^2 sum F(x)^2 with k = 2
    assert float(out["V_plus"]) == pytest.approx(4 * sum(v * v for v in locals_))
    assert float(out["V_minus"]) > 0


def test_bound_table(capsys, tmp_path):
    assert main(["bound", "edge_upper_tail", "--param", "c_geom=12.296164071504347",
                 "--param", "EN=157.0796", "--r", "0,50,100"]) == 0
    rows = _rows(capsys.readouterr().out)
    vals = [float(r["bound"]) for r in rows]
    assert vals[0] == 1.0 and vals[1] > vals[2] > 0
    assert all(math.isclose(math.exp(-float(r["I_r"])), float(r["bound"])) for r in rows)
    out = tmp_path / "b.csv"
    assert main(["bound", "upper_tail_Vbeta", "--param", "c=2", "--log", "--r-min", "1",
                 "--r-max", "100", "--n", "5", "--out", str(out)]) == 0
    assert len(_rows(out.read_text())) == 5


def test_bound_bad_parameter_reports_error(capsys):
    assert main(["bound", "edge_upper_tail", "--param", "c_geom=-1", "--param", "EN=1"]) == 2
    assert "error" in capsys.readouterr().err


def test_convex_distance_instance(tmp_path, capsys):
    inst = {"points": [[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]], "multiplicities": [1, 1, 2],
            "event": {"type": "threshold", "m": 2}}
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(inst))
    assert main(["convex-distance", str(path), "--check"]) == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines() if not line.startswith("mixture"))
    # two of the four counted atoms must go, giving k / sqrt(xi(W)) = 2 / 2
    assert float(out["value"]) == pytest.approx(1.0, abs=1e-7)
    assert out["properties_ok"] == "True"
    finite = {"points": [[0.0, 0.0], [1.0, 1.0]],
              "event": {"type": "finite", "configurations": [{"points": [[0.0, 0.0]]}, {"points": [[1.0, 1.0]]}]}}
    path.write_text(json.dumps(finite))
    assert main(["convex-distance", str(path)]) == 0
    val = float(capsys.readouterr().out.splitlines()[0].split(",")[1])
    assert val == pytest.approx(1 / math.sqrt(2), abs=1e-7)


def test_experiment_spec_file(tmp_path, capsys):
    model = HomogeneousTorus(30.0, Window.unit(2, periodic=True))
    spec = ExperimentSpec("cli", model, {"name": "edge_count", "rho": 0.1},
                          {"curve": "edge_upper_tail", "params": {"c_geom": "auto", "EN": "auto"}},
                          100, [2.0, 5.0], seed=1)
    path = tmp_path / "spec.json"
    save_spec(spec, path)
    assert main(["experiment", str(path), "--out", str(tmp_path / "res")]) == 0
    cap = capsys.readouterr()
    assert (tmp_path / "res.csv").exists() and "status: PASS" in cap.err
    assert main(["experiment", str(path), "--replications", "20"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert all(r["n_total"] == "20" for r in rows)


def test_experiment_named_clt(capsys):
    assert main(["experiment", "--named", "clt-consistency"]) == 0
    rows = _rows(capsys.readouterr().out)
    xs = [float(r["x_n"]) for r in rows]
    assert len(xs) == 3 and xs[0] < xs[1] < xs[2]


def test_experiment_named_infinite_edges(capsys):
    assert main(["experiment", "--named", "infinite-edges", "--replications", "3"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [float(r["R"]) for r in rows] == [2.0, 4.0, 8.0, 16.0]
