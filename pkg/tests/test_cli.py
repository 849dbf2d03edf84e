import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from helmflow.cli import experiment_39pq, main
from helmflow.netmodel import Branch, Bus, BusKind, make_network, to_json


@pytest.fixture
def degenerate_case(tmp_path):
    # no-load voltage of bus 2 is zero, so the model 3 seed is unusable
    buses = [Bus(1, BusKind.SLACK), Bus(2, BusKind.PQ, -0.1), Bus(3, BusKind.PQ, shunt=-1j)]
    net = make_network(buses, [Branch(1, 2, -3j), Branch(2, 3, 1j), Branch(1, 3, 1j)], name="bridge")
    path = tmp_path / "bridge.json"
    path.write_text(to_json(net))
    return path


def test_solve_writes_report_and_emits(tmp_path, capsys):
    out = tmp_path / "r" / "case9.json"
    code = main(["solve", "--case", "case9", "--model", "4", "--out", str(out),
                 "--emit", "coeffs,singularities,trace"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["max_rs"] <= 1e-9 and doc["pade_order"] == [15, 15] and doc["series_order"] == 30
    assert "max|Rs|" in capsys.readouterr().out
    coeffs = list(csv.reader(open(out.with_name("case9.coeffs.csv"))))
    assert coeffs[0] == ["bus", "n", "abs_coeff"] and len(coeffs) == 1 + 9 * 31
    roots = list(csv.reader(open(out.with_name("case9.singularities.csv"))))
    assert roots[0] == ["bus", "re", "im", "spurious"]
    assert {r[0] for r in roots[1:]} <= {str(b) for b in range(2, 10)}
    trace = list(csv.reader(open(out.with_name("case9.trace.csv"))))
    assert trace[0] == ["z", "bus", "abs_v"] and len(trace) == 1 + 101 * 9


def test_models_1_and_2_close_on_case9(tmp_path):
    vals = []
    for model in ("1", "2"):
        out = tmp_path / f"m{model}.json"
        assert main(["solve", "--case", "case9", "--model", model, "--out", str(out)]) == 0
        vals.append(json.loads(out.read_text())["max_rs"])
    assert max(vals) <= 10 * min(vals)


def test_input_errors_exit_2(tmp_path, capsys):
    assert main(["solve", "--case", "no_such_case"]) == 2
    assert main(["solve", "--case", "case9", "--order", "10"]) == 2
    assert main(["solve", "--case", "case9", "--emit", "coeffs"]) == 2
    bad = tmp_path / "bad.m"
    bad.write_text("mpc.bus = [1 3 0];")
    assert main(["solve", "--case", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--case", "case9", "--emit", "poles"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--case", "case9", "--model", "9"])
    assert exc.value.code == 2
    assert "error:" in capsys.readouterr().err


def test_solver_error_exit_3(degenerate_case, capsys):
    assert main(["solve", "--case", str(degenerate_case), "--model", "3"]) == 3
    assert "DegenerateSeedError" in capsys.readouterr().err


def test_table_18_rows(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["table", "--case", "case9", "case14", "case30", "--repeats", "1",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 18
    assert list(rows[0])[:5] == ["system", "model", "max_rs", "max_delta", "seconds"]
    assert {r["model"] for r in rows} == {"subr1", "subr2", "1", "2", "3", "4"}
    assert all(float(r["max_rs"]) < 1e-2 for r in rows)


def test_table_partial_failure_exit_4(tmp_path, degenerate_case):
    out = tmp_path / "t.csv"
    code = main(["table", "--case", str(degenerate_case), "--model", "3", "4", "--repeats", "1",
                 "--out", str(out)])
    assert code == 4
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2
    bad = [r for r in rows if r["model"] == "3"][0]
    assert math.isnan(float(bad["max_rs"])) and "DegenerateSeedError" in bad["message"]
    good = [r for r in rows if r["model"] == "4"][0]
    # a load behind a zero Thevenin voltage has no solution, but the cell still runs
    assert good["message"] == "" and math.isfinite(float(good["max_rs"]))


def test_table_pade_sweep(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["table", "--case", "case9", "--model", "subr1", "--repeats", "1",
                 "--pade-sweep", "5", "25", "10", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["pade"] for r in rows] == ["5/5", "15/15", "25/25"]


def test_experiment_control_case9(tmp_path):
    rep = experiment_39pq("case9", out_dir=tmp_path)
    assert rep["max_difference"] <= 1e-8
    assert rep["helm"]["stable_everywhere"] and not rep["newton"]["unstable_buses"]
    assert rep["homotopy"]["completed"]
    for name in ("helm_trace.csv", "newton_trace.csv", "report.json"):
        assert (tmp_path / name).exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "helmflow", "solve", "--case", "case9",
                          "--model", "subr2", "--no-newton"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "max|Delta| n/a" in res.stdout


def test_solve_output_is_deterministic(tmp_path):
    docs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        assert main(["solve", "--case", "case14", "--model", "2", "--out", str(out), "--emit", "coeffs"]) == 0
        doc = json.loads(out.read_text())
        doc.pop("elapsed")
        docs.append((doc, out.with_name(f"r{k}.coeffs.csv").read_text()))
    assert docs[0] == docs[1]
