import json
import shutil
from pathlib import Path

import pytest

from cpt import cli
from cpt.data import example_path

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def data(tmp_path):
    dst = tmp_path / "example.csv"
    shutil.copyfile(example_path(), dst)
    return dst


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_golden_example(tmp_path, data, capsys):
    assert run("test", data, "--alpha", 0.05, "--m", 19, "--ordering", "none", "--seed", 7,
               "--out", tmp_path / "o") == 0
    got = json.loads((tmp_path / "o" / "test_report.json").read_text())
    want = json.loads((GOLDEN / "example_test_report.json").read_text())
    assert got == want
    assert "p-value     0.05" in capsys.readouterr().out
    man = json.loads((tmp_path / "o" / "test.manifest.json").read_text())
    assert man["command"] == "test" and man["seed"] == 7


def test_level_warning(tmp_path, data, capsys):
    assert run("test", data, "--m", 19, "--out", tmp_path / "a") == 0
    assert "conservative" not in capsys.readouterr().err
    assert run("test", data, "--m", 18, "--out", tmp_path / "b") == 0
    assert "conservative" in capsys.readouterr().err


def test_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x1\n1,2\n3,oops\n")
    assert run("test", bad, "--out", tmp_path / "o") == 2
    assert "bad.csv:3:" in capsys.readouterr().err


def test_power_condition_message(tmp_path, data, capsys):
    assert run("test", data, "--m", 50, "--alpha", 0.02, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "n ≥ pm" in err and "n=120" in err and "m=50" in err


def test_unknown_target(tmp_path, data, capsys):
    assert run("test", data, "--target", "x9", "--out", tmp_path / "o") == 2
    assert "x9" in capsys.readouterr().err


def test_contrast_target(tmp_path, data):
    R = tmp_path / "R.csv"
    R.write_text("1,0\n0,1\n0,0\n")
    assert run("test", data, "--target", R, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "test_report.json").read_text())
    assert rep["r"] == 2


def test_internal_error_exit_code(tmp_path, data, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "cpt", boom)
    assert run("test", data, "--out", tmp_path / "o") == 1


def test_ci(tmp_path, data, capsys):
    assert run("ci", data, "--target", "x1", "--grid-check", "--out", tmp_path / "a") == 0
    a = json.loads((tmp_path / "a" / "ci_report.json").read_text())
    assert a["bounded"] and a["lower"] <= a["ols_estimate"] <= a["upper"]
    assert abs(a["grid_check"]["lower"] - a["lower"]) < 0.01
    assert run("ci", data, "--target", "x1", "--alpha", 0.1, "--m", 19,
               "--out", tmp_path / "b") == 0
    b = json.loads((tmp_path / "b" / "ci_report.json").read_text())
    assert a["lower"] <= b["lower"] <= b["upper"] <= a["upper"]
    assert run("ci", data, "--target", "x1", "--alpha", 0.04, "--m", 19,
               "--out", tmp_path / "c") == 0
    assert "unbounded" in capsys.readouterr().out
    assert run("ci", data, "--target", "x2", "--alpha", 0.5, "--m", 1,
               "--out", tmp_path / "d") == 0


def test_order_round_trip(tmp_path, data):
    o1, o2 = tmp_path / "o1", tmp_path / "o2"
    assert run("order", data, "--target", "x2", "--method", "ga", "--budget", 80,
               "--seed", 4, "--out", o1) == 0
    assert run("order", data, "--target", "x2", "--method", "ga", "--budget", 80,
               "--seed", 4, "--out", o2) == 0
    assert (o1 / "permutation.txt").read_bytes() == (o2 / "permutation.txt").read_bytes()
    rep = json.loads((o1 / "order_report.json").read_text())
    assert rep["objective"] >= rep["identity_objective"]
    # feeding the permutation back reproduces the objective
    assert run("test", data, "--target", "x2", "--preorder", o1 / "permutation.txt",
               "--out", tmp_path / "t") == 0
    t = json.loads((tmp_path / "t" / "test_report.json").read_text())
    assert t["objective"] == pytest.approx(rep["objective"], rel=1e-10)


def test_order_minimal_budget(tmp_path, data):
    assert run("order", data, "--budget", 10, "--population", 10, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "order_report.json").read_text())
    assert rep["trace_length"] == 1
    assert rep["objective"] >= rep["identity_objective"]
    assert len((tmp_path / "ordering_trace.csv").read_text().splitlines()) == 2


def test_simulate_golden_and_replay(tmp_path):
    out = tmp_path / "s"
    assert run("simulate", GOLDEN / "small_scenario.json", "--out", out) == 0
    for name in ("sim_summary.csv", "sim_cells.csv"):
        assert (out / name).read_text() == (GOLDEN / f"small_{name}").read_text()
    assert run("replay", out / "simulate.manifest.json") == 0


@pytest.mark.parametrize("scenario,where", [
    ({"signalLevels": []}, "$.signalLevels"),
    ({"signalLevels": [0], "designFamily": "poisson"}, "$.designFamily"),
    ({"signalLevels": [0], "reps": "many"}, "$.reps"),
])
def test_simulate_schema_errors(tmp_path, capsys, scenario, where):
    f = tmp_path / "sc.json"
    f.write_text(json.dumps(scenario))
    assert run("simulate", f, "--out", tmp_path / "o") == 2
    assert where in capsys.readouterr().err


def test_simulate_bad_json(tmp_path, capsys):
    f = tmp_path / "sc.json"
    f.write_text('{"signalLevels": [0],\n "n": }')
    assert run("simulate", f) == 2
    assert "sc.json:2" in capsys.readouterr().err


def test_example_and_usage(tmp_path):
    assert run("example", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_bytes() == example_path().read_bytes()
    assert run() == 2
    assert run("test") == 2
