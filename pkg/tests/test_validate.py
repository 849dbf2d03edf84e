import json

import numpy as np
import pytest

from conftest import two_bus_pq, two_bus_pq_exact
from helmflow.helm_pq import PqEmbeddingKind, pq_series
from helmflow.helm_pv import make_spec, pv_series
from helmflow.netmodel import build_ybus, convert_pv_to_pq, load_case
from helmflow.reference import newton_solve, solution_q
from helmflow.validate import (check_cift_jacobian, check_reflecting_condition, residual_bpee,
                               solve_model, two_track_pq, two_track_pv)


def test_residual_of_exact_solution():
    net = two_bus_pq(-0.5, -0.2, 0.02 + 0.1j)
    v = np.array([1, two_bus_pq_exact(-0.5, -0.2, 0.02 + 0.1j)])
    assert residual_bpee(net, build_ybus(net), v).max_rs < 1e-14


def test_residual_of_flat_profile():
    net = load_case("case9")
    y = build_ybus(net)
    flat = np.ones(9, dtype=complex)
    res = residual_bpee(net, y, flat)
    s, rows = net.injections, y.row_sums
    pq, pv = net.pq, net.pv
    np.testing.assert_allclose(res.per_bus[pq], np.abs(rows[pq] - np.conj(s[pq])))
    expect_pv = np.maximum(np.abs(rows[pv].real - s[pv].real), np.abs(1 - net.v_targets[pv]))
    np.testing.assert_allclose(res.per_bus[pv], expect_pv)
    assert res.per_bus[0] == 0


def test_residual_zero_voltage():
    net = two_bus_pq()
    with pytest.raises(ZeroDivisionError):
        residual_bpee(net, build_ybus(net), np.array([1, 0]))


@pytest.mark.parametrize("model", [None, "1", "2", "3", "4", "subr1", "subr2"])
def test_cift_pivots(model):
    net = load_case("case14").normalized()[0]
    y = build_ybus(net)
    rep = check_cift_jacobian(net, y, None if model is None else make_spec(net, y, model))
    assert rep.passed and rep.min_pivot > 0


@pytest.mark.parametrize("kind", list(PqEmbeddingKind))
def test_two_track_pq_matches_production(kind):
    net = load_case("case14")
    y = build_ybus(net)
    pqnet = convert_pv_to_pq(net, solution_q(net, y, newton_solve(net, y).voltages)).normalized()[0]
    adm = build_ybus(pqnet)
    tt = two_track_pq(pqnet, adm, 20, kind)
    prod = pq_series(pqnet, adm, 20, kind)
    assert check_reflecting_condition(tt) < 1e-12
    assert np.max(np.abs(tt.v - prod.v) / (1 + np.abs(prod.v))) < 1e-12


@pytest.mark.parametrize("model", ["1", "2", "3", "4", "subr2"])
def test_two_track_pv_matches_production(model):
    net = load_case("case14").normalized()[0]
    adm = build_ybus(net)
    spec = make_spec(net, adm, model)
    tt = two_track_pv(net, adm, spec, 20)
    prod = pv_series(net, adm, spec, 20)
    assert check_reflecting_condition(tt) < 1e-12
    assert np.max(np.abs(tt.v - prod.v) / (1 + np.abs(prod.v))) < 1e-12


def test_two_track_rejects_subr1():
    net = load_case("case9").normalized()[0]
    adm = build_ybus(net)
    with pytest.raises(ValueError):
        two_track_pv(net, adm, make_spec(net, adm, "subr1"), 5)


def test_reflecting_needs_conjugate_track():
    net = two_bus_pq()
    with pytest.raises(ValueError):
        check_reflecting_condition(pq_series(net, build_ybus(net), 4))


def test_solve_model_report():
    rep = solve_model(load_case("case9"), "4", (10, 10), order=24, repeats=2)
    assert rep.series_order == 24 and rep.repeats == 2
    assert rep.max_rs < 1e-9 and rep.max_delta < 1e-8
    doc = json.loads(rep.to_json())
    assert doc["schema"] == 1
    assert [d["bus"] for d in doc["voltages"]] == rep.bus_ids
    assert rep.coefficients.shape == (25, 9)


def test_solve_model_input_errors():
    net = load_case("case9")
    with pytest.raises(ValueError):
        solve_model(net, "5")
    with pytest.raises(ValueError):
        solve_model(net, "4", (15, 15), order=20)


def test_pq_models_reject_pv_case():
    with pytest.raises(ValueError):
        solve_model(load_case("case9"), "helm-pq")


def test_pq_network_has_no_magnitude_rows():
    net = two_bus_pq()
    res = residual_bpee(net, build_ybus(net), np.array([1, 0.9 - 0.1j]))
    assert res.max_magnitude == 0 and res.max_rs == res.max_power > 0
