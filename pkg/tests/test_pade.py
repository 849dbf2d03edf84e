import csv

import numpy as np
import pytest

from helmflow.pade import (PadeError, PoleError, build_pade, evaluate, export_singularities,
                           growth_radius, polynomial_roots, singularity_map)


def taylor_of_rational(p, q, n):
    out = np.zeros(n + 1, dtype=complex)
    for k in range(n + 1):
        acc = p[k] if k < len(p) else 0
        for j in range(1, min(k, len(q) - 1) + 1):
            acc -= q[j] * out[k - j]
        out[k] = acc / q[0]
    return out


@pytest.mark.parametrize("method", ["viskovatov", "toeplitz"])
def test_recovers_rational_function(method):
    p, q = [1.0, 2.0], [1.0, -0.5, 0.1]
    c = taylor_of_rational(p, q, 3)
    pa = build_pade(c, 1, 2, method)
    np.testing.assert_allclose(pa.num, p, atol=1e-12)
    np.testing.assert_allclose(pa.den, q, atol=1e-12)


@pytest.mark.parametrize("method", ["viskovatov", "toeplitz"])
def test_exponential_2_2(method):
    c = 1 / np.array([1, 1, 2, 6, 24], dtype=float)
    pa = build_pade(c, 2, 2, method)
    np.testing.assert_allclose(pa.num, [1, 0.5, 1 / 12], atol=1e-13)
    np.testing.assert_allclose(pa.den, [1, -0.5, 1 / 12], atol=1e-13)
    assert evaluate(pa, 1.0) == pytest.approx(19 / 7)


def test_taylor_match():
    rng = np.random.default_rng(1)
    c = rng.normal(size=12) + 1j * rng.normal(size=12)
    pa = build_pade(c, 5, 6)
    np.testing.assert_allclose(pa.taylor(11), c, rtol=1e-9, atol=1e-9)


def test_low_rank_series_terminates_exactly():
    c = taylor_of_rational([1.0], [1.0, -0.5], 20)
    pa = build_pade(c, 8, 8)
    assert evaluate(pa, 1.0) == pytest.approx(2.0, rel=1e-13)


def test_constant_series():
    pa = build_pade([1.5, 0, 0, 0, 0], 2, 2, "toeplitz")
    assert evaluate(pa, 0.7) == 1.5


def test_errors():
    with pytest.raises(PadeError):
        build_pade([1, 2, 3], 2, 2)
    with pytest.raises(ValueError):
        build_pade([1, 2, 3], 1, 1, "bogus")
    pa = build_pade(taylor_of_rational([1.0], [1.0, -2.0], 2), 0, 1)
    with pytest.raises(PoleError):
        evaluate(pa, 0.5)


def test_polynomial_roots():
    r = polynomial_roots(np.polynomial.polynomial.polyfromroots([0.5, -2, 1j]))
    np.testing.assert_allclose(np.sort_complex(r), np.sort_complex([0.5, -2, 1j]), atol=1e-12)


def test_growth_radius_of_geometric_series():
    assert growth_radius(3.0 ** np.arange(20)) == pytest.approx(1 / 3)
    assert growth_radius(0.5 ** np.arange(20)) == 1.0


def test_branch_point_is_found():
    # sqrt(1 - z/0.3): poles of diagonal approximants gather on [0.3, inf)
    n = np.arange(41)
    from scipy.special import binom
    c = binom(0.5, n) * (-1 / 0.3) ** n
    sm = singularity_map(c, 20, 20, bus=4)
    g = sm.genuine()
    assert g.size > 0
    assert np.min(np.abs(g)) == pytest.approx(0.3, rel=2e-2)
    assert np.all(np.abs(g.imag) < 1e-6 * np.abs(g))


def test_export_singularities(tmp_path):
    c = taylor_of_rational([1.0], [1.0, -0.5, 0.06], 8)
    sm = singularity_map(c, 3, 3, bus=2, rescale=False)
    path = tmp_path / "s.csv"
    export_singularities(path, [sm])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["bus", "re", "im", "spurious"]
    assert len(rows) == 1 + len(sm.roots)
    genuine = sorted(float(r[1]) for r in rows[1:] if r[3] == "0")
    assert genuine[:2] == pytest.approx([1 / 0.3, 5.0], rel=1e-8)


def test_diagonal_sequence_converges_case9():
    from helmflow.reference import newton_solve
    from helmflow.validate import model_series
    from helmflow.netmodel import load_case
    net = load_case("case9")
    ref = newton_solve(net, tol=1e-13).voltages
    bundle, vs, _ = model_series(net, "4", 30)
    errs = []
    for n in (5, 10, 15):
        vals = np.array([evaluate(build_pade(bundle.v[:, k], n, n), 1.0) for k in range(9)]) * vs
        errs.append(np.max(np.abs(vals - ref)))
    assert errs[1] <= 10 * errs[0] and errs[2] <= 10 * errs[1]
    assert errs[2] < 1e-10
