import numpy as np
import pytest

from conftest import two_bus_pv, two_bus_pv_exact
from helmflow.helm_pq import DegenerateSeedError
from helmflow.helm_pv import (CiftError, ModelTag, assemble_block, factor_block, make_spec,
                              pv_series, seed_residual)
from helmflow.series import convolve_columns
from helmflow.netmodel import Branch, Bus, BusKind, build_ybus, load_case, make_network
from helmflow.validate import solve_model

GENERAL = ["1", "2", "3", "4"]


@pytest.mark.parametrize("model", GENERAL + ["subr2"])
def test_two_bus_pv_closed_form(model):
    p, m, x, b = 0.4, 1.03, 0.2, 0.1
    u, q = two_bus_pv_exact(p, m, x, b)
    rep = solve_model(two_bus_pv(p, m, x, b), model, (8, 8), newton=False)
    assert rep.voltages[1] == pytest.approx(u, abs=1e-13)
    s = rep.voltages * np.conj(build_ybus(two_bus_pv(p, m, x, b)).full @ rep.voltages)
    assert s[1].imag == pytest.approx(q, abs=1e-12)


def test_two_bus_pv_subr1():
    u, _ = two_bus_pv_exact(0.4, 1.03, 0.2, 0.1)
    rep = solve_model(two_bus_pv(), "subr1", (8, 8), newton=False)
    # SUBR1 loses digits in its Padé step; it is only required to be close
    assert rep.voltages[1] == pytest.approx(u, abs=1e-5)


@pytest.mark.parametrize("model", GENERAL + ["subr1", "subr2"])
def test_seed_solves_z0_equations(model):
    net = load_case("case14").normalized()[0]
    adm = build_ybus(net)
    assert seed_residual(net, adm, make_spec(net, adm, model)) < 1e-12


@pytest.mark.parametrize("model", GENERAL)
def test_partial_sums_satisfy_embedding(model):
    net = load_case("case14").normalized()[0]
    adm = build_ybus(net)
    spec = make_spec(net, adm, model)
    bundle = pv_series(net, adm, spec, 40)
    assert bundle.factorizations == 1
    z = 0.15
    v = np.polynomial.polynomial.polyval(z, bundle.v)
    f = np.conj(v) * (adm.full @ v + (z - 1) * spec.a) + (z - 1) * spec.b - z * np.conj(net.injections)
    pq, pv = net.pq, net.pv
    assert np.max(np.abs(f[pq])) < 1e-12
    assert np.max(np.abs(f[pv].real)) < 1e-12
    path = spec.alpha + z * spec.beta
    assert np.max(np.abs(np.abs(v[pv]) - path[pv])) < 1e-12


def test_subr2_magnitude_path():
    net = load_case("case9").normalized()[0]
    adm = build_ybus(net)
    bundle = pv_series(net, adm, make_spec(net, adm, "subr2"), 40)
    z = 0.1
    v = np.polynomial.polynomial.polyval(z, bundle.v)
    m = net.v_targets[net.pv]
    np.testing.assert_allclose(np.abs(v[net.pv]) ** 2, 1 + z * (m**2 - 1), rtol=1e-12)


def test_subr1_conjugate_track_follows_path():
    # SUBR1 takes Vbar at PV buses from the prescribed |V|^2, so V * Vbar
    # matches the path coefficient by coefficient while Vbar need not be conj(V)
    net = load_case("case9").normalized()[0]
    adm = build_ybus(net)
    bundle = pv_series(net, adm, make_spec(net, adm, "subr1"), 12)
    pv = net.pv
    prod = np.array([convolve_columns(bundle.v, bundle.vbar, n)[pv] for n in range(13)])
    m = net.v_targets[pv]
    expect = np.zeros_like(prod)
    expect[0], expect[1] = 1.0, m**2 - 1
    scale = np.abs(bundle.v[:, pv]).max(axis=1, keepdims=True) ** 2 + 1
    assert np.max(np.abs(prod - expect) / scale) < 1e-13
    assert np.max(np.abs(bundle.vbar[:, pv] - np.conj(bundle.v[:, pv]))) > 1e-6


def test_model_presets():
    net = load_case("case9").normalized()[0]
    adm = build_ybus(net)
    s1, s4 = make_spec(net, adm, "1"), make_spec(net, adm, "4")
    np.testing.assert_array_equal(s1.a, adm.row_sums)
    np.testing.assert_array_equal(s4.b, adm.row_sums)
    s2 = make_spec(net, adm, "2")
    assert s2.seed[net.pv] == pytest.approx(net.v_targets[net.pv])
    s3 = make_spec(net, adm, "3")
    assert np.max(np.abs(adm.full[1:] @ s3.seed)) < 1e-12
    with pytest.raises(ValueError):
        make_spec(net, adm, "custom")
    with pytest.raises(ValueError):
        make_spec(net, adm, "7")


def test_model3_degenerate_seed():
    # bridge whose no-load voltage at bus 2 is exactly zero:
    # V3 = y13 / (y13 + y23 + y3) = 1/3 and y12 = -y23 * V3
    buses = [Bus(1, BusKind.SLACK), Bus(2, BusKind.PQ, -0.1), Bus(3, BusKind.PQ, shunt=-1j)]
    net = make_network(buses, [Branch(1, 2, -3j), Branch(2, 3, 1j), Branch(1, 3, 1j)])
    adm = build_ybus(net)
    with pytest.raises(DegenerateSeedError):
        make_spec(net, adm, "3")


def test_singular_block_raises():
    with pytest.raises(CiftError):
        factor_block(np.array([[1.0, 0.0], [0.0, 1e-14]]))


def test_subr1_has_no_block():
    net = load_case("case9").normalized()[0]
    adm = build_ybus(net)
    with pytest.raises(ValueError):
        assemble_block(net, adm, make_spec(net, adm, ModelTag.SUBR1))


def test_footnote_variant_differs_only_with_pv_conductance():
    net = two_bus_pv(b_sh=0.1)
    a = solve_model(net, "subr2", (8, 8), newton=False)
    b = solve_model(net, "subr2", (8, 8), newton=False, subr2_footnote=True)
    # a purely susceptive shunt has no conductance to drop
    assert a.voltages[1] == pytest.approx(b.voltages[1], abs=1e-14)


@pytest.mark.parametrize("model", GENERAL + ["subr2"])
def test_magnitude_rows_hold_coefficientwise(model):
    net = load_case("case14").normalized()[0]
    adm = build_ybus(net)
    spec = make_spec(net, adm, model)
    bundle = pv_series(net, adm, spec, 25)
    pv = net.pv
    for n in range(26):
        vv = convolve_columns(bundle.v, np.conj(bundle.v), n)[pv]
        assert np.max(np.abs(vv - spec.path_squared_coeff(n)[pv])) < 1e-12
