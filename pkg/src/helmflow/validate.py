"""Solution quality metrics, theory checks and the end-to-end solve pipeline.

The residual is always measured on the physical network: the voltages at
``z = 1`` are substituted into ``sum_k Y_ik V_k = conj(S_i) / conj(V_i)``.
At PV buses only the real power and the magnitude are data, so those rows
report ``max(|Re(conj(V_i) I_i) - P_i|, ||V_i| - M_i|)``.

The two-track recurrences carry ``V`` and ``Vbar`` as independent series.
They exist to check that the conjugate track really is the reflection of
``V`` (``Vbar[n] == conj(V[n])``), which the production solvers assume.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .helm_pq import PqEmbeddingKind, pq_series, solve_seed_pq
from .helm_pv import (EmbeddingSpec, ModelTag, _coupling, make_spec, pv_series,
                      real_split_matrix)
from .netmodel import AdmittanceMatrix, Network, build_ybus
from .pade import build_pade, evaluate
from .reference import NewtonError, newton_solve
from .series import SeriesBundle, convolve_columns, reciprocal_next_columns

REPORT_SCHEMA = 1
PQ_MODELS = {"helm-pq": PqEmbeddingKind.CANONICAL, "helm-pq-alt": PqEmbeddingKind.ALTERNATIVE}
MODEL_NAMES = ("1", "2", "3", "4", "subr1", "subr2", "helm-pq", "helm-pq-alt")


@dataclass
class Residuals:
    """Per-bus residual magnitudes (slack entry is 0) and their maxima."""

    per_bus: np.ndarray
    max_rs: float
    max_power: float  # PQ current mismatch and PV real-power mismatch
    max_magnitude: float  # PV magnitude mismatch


def residual_bpee(net: Network, y: AdmittanceMatrix, voltages: np.ndarray) -> Residuals:
    v = np.asarray(voltages, dtype=complex)
    if np.any(v == 0):
        raise ZeroDivisionError("a bus voltage is exactly zero")
    s = net.injections
    cur = y.full @ v
    pq, pv = net.pq, net.pv
    power = np.zeros(net.n_bus)
    mag = np.zeros(net.n_bus)
    power[pq] = np.abs(cur[pq] - np.conj(s[pq] / v[pq]))
    if pv.any():
        power[pv] = np.abs((np.conj(v[pv]) * cur[pv]).real - s[pv].real)
        mag[pv] = np.abs(np.abs(v[pv]) - net.v_targets[pv])
    per_bus = np.maximum(power, mag)
    return Residuals(per_bus, float(per_bus[1:].max(initial=0.0)),
                     float(power[1:].max(initial=0.0)), float(mag[1:].max(initial=0.0)))


# ---------------------------------------------------------------------------
# CIFT condition

@dataclass
class PivotReport:
    min_pivot: float
    max_pivot: float
    rtol: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.min_pivot > self.rtol * self.max_pivot


def check_cift_jacobian(net: Network, y: AdmittanceMatrix, spec: EmbeddingSpec | None = None,
                        rtol: float = 1e-10) -> PivotReport:
    """Smallest and largest LU pivots of the linearisation at the seed.

    Without ``spec`` the PQ-only matrix ``Y'`` is checked. The general
    models use their real block matrix.
    """
    if spec is None or spec.model is ModelTag.SUBR1:
        mat = y.reduced
    else:
        ymat, c, d = _coupling(net, y, spec)
        mat = real_split_matrix(ymat[1:, 1:], c, d, spec.seed[1:], net.pv[1:])
    lu, _ = scipy.linalg.lu_factor(mat, check_finite=False)
    piv = np.abs(np.diag(lu))
    return PivotReport(float(piv.min()), float(piv.max()), rtol)


# ---------------------------------------------------------------------------
# two-track recurrences

def two_track_pq(net: Network, adm: AdmittanceMatrix, order: int,
                 kind: PqEmbeddingKind = PqEmbeddingKind.CANONICAL) -> SeriesBundle:
    """PQ-only embedding with ``V`` and ``Vbar`` solved as separate systems.

    ``Y' V[n] = S* Wbar[n-1]`` and ``conj(Y') Vbar[n] = S W[n-1]`` where
    ``W = 1/V`` and ``Wbar = 1/Vbar``.
    """
    nb = net.n_bus
    lu = scipy.linalg.lu_factor(adm.reduced)
    lu_bar = scipy.linalg.lu_factor(np.conj(adm.reduced))
    v = np.zeros((order + 1, nb), dtype=complex)
    vbar, w, wbar = np.zeros_like(v), np.zeros_like(v), np.zeros_like(v)
    v[0] = solve_seed_pq(adm, kind, lu)
    vbar[0, 0] = 1.0
    if kind is PqEmbeddingKind.ALTERNATIVE:
        vbar[0] = 1.0
    else:
        vbar[0, 1:] = scipy.linalg.lu_solve(lu_bar, -np.conj(adm.slack_column))
    w[0], wbar[0] = 1 / v[0], 1 / vbar[0]
    s = net.injections[1:]
    y = adm.row_sums[1:]
    for n in range(1, order + 1):
        shift = (n == 1 and kind is PqEmbeddingKind.ALTERNATIVE)
        v[n, 1:] = scipy.linalg.lu_solve(lu, np.conj(s) * wbar[n - 1, 1:] - y * shift)
        vbar[n, 1:] = scipy.linalg.lu_solve(lu_bar, s * w[n - 1, 1:] - np.conj(y) * shift)
        w[n] = reciprocal_next_columns(v, w, n)
        wbar[n] = reciprocal_next_columns(vbar, wbar, n)
    return SeriesBundle(v, vbar=vbar, factorizations=2)


def two_track_pv(net: Network, adm: AdmittanceMatrix, spec: EmbeddingSpec, order: int,
                 subr2_footnote: bool = False) -> SeriesBundle:
    """General model (and SUBR2) with ``V`` and ``Vbar`` as independent unknowns.

    Each bus contributes ``F = Vbar (Ymat V + (z-1) a + z h V) + (z-1) b`` and
    its mirror ``Fbar``. PQ buses impose ``F = z S*`` and ``Fbar = z S``; PV
    buses impose ``F + Fbar = 2 z P`` and ``Vbar V = L^2(z)``. For the
    general models ``Ymat = Y`` and ``h = 0``; SUBR2 uses the transmission
    part of Y, ``a = b = 0`` and ``h`` equal to the shunt admittance.
    """
    if spec.model is ModelTag.SUBR1:
        raise ValueError("SUBR1 has no reflection-symmetric two-track form")
    nb = net.n_bus
    pv = net.pv[1:]
    if spec.model is ModelTag.SUBR2:
        ymat = adm.full - np.diag(adm.row_sums)
        a = np.zeros(nb, dtype=complex)
        h = adm.row_sums.copy()
        h_pv = h.copy()
        if subr2_footnote:
            h_pv[net.pv] = 1j * h[net.pv].imag
    else:
        ymat, a = adm.full, spec.a
        h = h_pv = np.zeros(nb, dtype=complex)
    b = spec.b
    v0 = spec.seed
    vb0 = np.conj(v0)
    ybar = np.conj(ymat)
    ym = ymat[1:, 1:]
    d = (ymat @ v0 - a)[1:]
    dbar = (ybar @ vb0 - np.conj(a))[1:]
    # unknowns [V[n] | Vbar[n]] on non-slack buses
    f_v = vb0[1:, None] * ym
    f_vb = np.diag(d)
    g_v = np.diag(dbar)
    g_vb = v0[1:, None] * np.conj(ym)
    top = np.where(pv[:, None], np.hstack([f_v + g_v, f_vb + g_vb]), np.hstack([f_v, f_vb]))
    bottom = np.where(pv[:, None], np.hstack([np.diag(vb0[1:]), np.diag(v0[1:])]),
                      np.hstack([g_v, g_vb]))
    lu = scipy.linalg.lu_factor(np.vstack([top, bottom]))

    v = np.zeros((order + 1, nb), dtype=complex)
    vb = np.zeros_like(v)
    v[0], vb[0] = v0, vb0
    cur, curb = np.zeros_like(v), np.zeros_like(v)
    cur[0], curb[0] = ymat @ v0, ybar @ vb0
    s = net.injections
    lsq = spec.path_squared()
    m = nb - 1
    for n in range(1, order + 1):
        vvb = convolve_columns(vb[:n], v[:n], n - 1)
        hh = np.where(net.pv, h_pv, h)
        known = (convolve_columns(vb[:n], cur[:n], n, start=1) + vb[n - 1] * a
                 + hh * vvb + b * (n == 1))
        known_b = (convolve_columns(v[:n], curb[:n], n, start=1) + v[n - 1] * np.conj(a)
                   + np.conj(hh) * vvb + np.conj(b) * (n == 1))
        r_f = np.conj(s) * (n == 1) - known
        r_fb = s * (n == 1) - known_b
        r_mag = (lsq[n] if n < 3 else 0.0) - convolve_columns(vb[:n], v[:n], n, start=1)
        r_top = np.where(net.pv, 2 * s.real * (n == 1) - known - known_b, r_f)[1:]
        r_bot = np.where(net.pv, r_mag, r_fb)[1:]
        x = scipy.linalg.lu_solve(lu, np.concatenate([r_top, r_bot]))
        v[n, 1:], vb[n, 1:] = x[:m], x[m:]
        cur[n], curb[n] = ymat @ v[n], ybar @ vb[n]
    return SeriesBundle(v, vbar=vb, factorizations=1)


def check_reflecting_condition(bundle: SeriesBundle) -> float:
    """Largest relative deviation ``|Vbar[n] - conj(V[n])|_inf / |V[n]|_inf`` over orders."""
    if bundle.vbar is None:
        raise ValueError("bundle has no conjugate track")
    dev = np.abs(bundle.vbar - np.conj(bundle.v)).max(axis=1)
    size = np.abs(bundle.v).max(axis=1)
    return float(np.max(np.where(size > 0, dev / np.where(size > 0, size, 1.0), dev)))


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class SolutionReport:
    case: str
    model: str
    pade_order: tuple[int, int]
    series_order: int
    voltages: np.ndarray
    max_rs: float
    max_rs_power: float
    max_rs_magnitude: float
    max_delta: float | None
    elapsed: float
    per_bus_rs: np.ndarray
    bus_ids: list[int]
    method: str = "viskovatov"
    subr2_footnote: bool = False
    timing_scope: str = "series + pade + evaluate, parse excluded, mean of repeats"
    repeats: int = 1
    coefficients: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("coefficients")
        d["schema"] = REPORT_SCHEMA
        d["pade_order"] = list(self.pade_order)
        d["voltages"] = [{"bus": b, "re": float(v.real), "im": float(v.imag), "abs": float(abs(v))}
                         for b, v in zip(self.bus_ids, self.voltages)]
        d["per_bus_rs"] = [{"bus": b, "rs": float(r)} for b, r in zip(self.bus_ids, self.per_bus_rs)]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)


def model_series(net: Network, model: str, order: int, subr2_footnote: bool = False):
    """Normalize, build the series for ``model`` and return ``(bundle, vs, net_n)``."""
    if model not in MODEL_NAMES:
        raise ValueError(f"unknown model {model!r}")
    nn, vs = net.normalized()
    adm = build_ybus(nn)
    if model in PQ_MODELS:
        bundle = pq_series(nn, adm, order, PQ_MODELS[model])
    else:
        bundle = pv_series(nn, adm, make_spec(nn, adm, model), order, subr2_footnote)
    return bundle, vs, nn


def continue_to_one(bundle: SeriesBundle, l: int, m: int, method: str = "viskovatov") -> np.ndarray:
    """Padé value at ``z = 1`` for every bus of a normalized bundle."""
    return np.array([evaluate(build_pade(bundle.v[:, k], l, m, method), 1.0)
                     for k in range(bundle.v.shape[1])])


def solve_model(net: Network, model: str, pade: tuple[int, int] = (15, 15), order: int | None = None,
                method: str = "viskovatov", subr2_footnote: bool = False, newton: bool = True,
                repeats: int = 1, newton_voltages: np.ndarray | None = None) -> SolutionReport:
    """Series, continuation and residual for one case and model."""
    l, m = pade
    order = l + m if order is None else order
    if order < l + m:
        raise ValueError(f"series order {order} is too short for [{l}/{m}]")
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        bundle, vs, _ = model_series(net, model, order, subr2_footnote)
        volts = continue_to_one(bundle, l, m, method) * vs
        times.append(time.perf_counter() - t0)
    y = build_ybus(net)
    res = residual_bpee(net, y, volts)
    delta = None
    if newton:
        ref = newton_voltages
        if ref is None:
            try:
                ref = newton_solve(net, y).voltages
            except NewtonError:
                ref = None
        if ref is not None:
            delta = float(np.abs(volts - ref).max())
    return SolutionReport(net.name, model, (l, m), order, volts, res.max_rs, res.max_power,
                          res.max_magnitude, delta, float(np.mean(times)), res.per_bus, net.ids,
                          method, subr2_footnote, repeats=max(1, repeats), coefficients=bundle.v * vs)
