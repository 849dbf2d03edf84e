"""Holomorphic embeddings for mixed PQ/PV networks.

The general model embeds each PQ balance as

    conj(V_i) * (sum_k Y_ik V_k + (z - 1) a_i) + (z - 1) b_i = z conj(S_i)

and each PV bus as the real part of the same expression (equal to ``z P_i``)
together with ``|V_i|**2 = L_i(z)**2``. The reflecting condition is used to
replace the conjugate track by the conjugated coefficients, so every order
``n >= 1`` needs one real ``2N x 2N`` solve with a matrix that depends only
on the seed. Four presets of ``(a, b, L, seed)`` are provided, plus the two
reference embeddings ``SUBR1`` (complex PV rows with a triple
product) and ``SUBR2`` (shunt/transmission split).

All functions here expect a network whose slack voltage is 1; see
``Network.normalized``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .helm_pq import DegenerateSeedError
from .netmodel import AdmittanceMatrix, CaseError, Network
from .series import SeriesBundle, convolve_columns, reciprocal_next_columns


class CiftError(ArithmeticError):
    """The linearisation at the seed is singular."""


class ModelTag(enum.Enum):
    MODEL1 = "1"
    MODEL2 = "2"
    MODEL3 = "3"
    MODEL4 = "4"
    SUBR1 = "subr1"
    SUBR2 = "subr2"
    CUSTOM = "custom"


GENERAL_MODELS = (ModelTag.MODEL1, ModelTag.MODEL2, ModelTag.MODEL3, ModelTag.MODEL4)


@dataclass(frozen=True)
class EmbeddingSpec:
    """Per-bus embedding parameters, indexed like ``network.buses``.

    ``alpha + beta z`` is the magnitude path at PV buses. The SUBR models
    prescribe the squared magnitude ``1 + z (M**2 - 1)`` directly; they store
    it in ``squared_path`` (rows are the z**0, z**1, z**2 coefficients).
    """

    model: ModelTag
    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    seed: np.ndarray
    squared_path: np.ndarray | None = None

    def path_squared(self) -> np.ndarray:
        if self.squared_path is not None:
            return self.squared_path
        return np.array([self.alpha**2, 2 * self.alpha * self.beta, self.beta**2])

    def path_squared_coeff(self, n: int) -> np.ndarray:
        sq = self.path_squared()
        return sq[n] if n < 3 else np.zeros(sq.shape[1])


def make_spec(net: Network, adm: AdmittanceMatrix, model: ModelTag | str) -> EmbeddingSpec:
    model = ModelTag(model)
    nb = net.n_bus
    y = adm.row_sums
    m = net.v_targets
    ones = np.ones(nb, dtype=complex)
    zeros = np.zeros(nb, dtype=complex)
    if model is ModelTag.MODEL1:
        spec = EmbeddingSpec(model, y.copy(), zeros, np.ones(nb), m - 1, ones)
    elif model is ModelTag.MODEL2:
        lam = np.where(net.pv, m, 1.0).astype(complex)
        spec = EmbeddingSpec(model, adm.full @ lam, zeros, lam.real.copy(), np.zeros(nb), lam)
    elif model is ModelTag.MODEL3:
        nu = np.empty(nb, dtype=complex)
        nu[0] = 1.0
        nu[1:] = np.linalg.solve(adm.reduced, -adm.slack_column)
        bad = np.flatnonzero(np.abs(nu) < 1e-8)
        if bad.size:
            raise DegenerateSeedError(f"model 3 seed vanishes at buses {[net.ids[k] for k in bad]}")
        mag = np.abs(nu)
        spec = EmbeddingSpec(model, zeros, zeros, mag, m - mag, nu)
    elif model is ModelTag.MODEL4:
        spec = EmbeddingSpec(model, zeros, y.copy(), np.ones(nb), m - 1, ones)
    elif model in (ModelTag.SUBR1, ModelTag.SUBR2):
        sq = np.array([np.ones(nb), m**2 - 1, np.zeros(nb)])
        spec = EmbeddingSpec(model, zeros, zeros, np.ones(nb), m - 1, ones, sq)
    else:
        raise ValueError(f"no preset for {model}")
    return spec


def seed_residual(net: Network, adm: AdmittanceMatrix, spec: EmbeddingSpec) -> float:
    """Largest residual of the embedded equations at ``z = 0``."""
    v0 = spec.seed
    pq, pv = net.pq[1:], net.pv[1:]
    if spec.model is ModelTag.SUBR2:
        it = (adm.full - np.diag(adm.row_sums)) @ v0
        f = np.conj(v0) * it
    elif spec.model is ModelTag.SUBR1:
        f = (adm.full @ v0 - adm.row_sums) * v0
    else:
        f = np.conj(v0) * (adm.full @ v0 - spec.a) - spec.b
    f = f[1:]
    mag = np.abs(v0[1:]) ** 2 - spec.path_squared()[0, 1:]
    parts = [np.abs(f[pq]), np.abs(f[pv].real), np.abs(mag[pv])]
    return float(max(np.max(p, initial=0.0) for p in parts))


# ---------------------------------------------------------------------------
# real-split block system

@dataclass
class BlockSystem:
    """Real ``2N x 2N`` system with columns ``Re V[n] | Im V[n]``.

    Rows ``0..N-1`` are real-power balances for every non-slack bus. Row
    ``N + i`` is the reactive balance if bus ``i`` is PQ, or the magnitude
    condition if it is PV.
    """

    matrix: np.ndarray
    lu: tuple
    min_pivot: float
    max_pivot: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n = rhs.size // 2
        x = scipy.linalg.lu_solve(self.lu, rhs)
        return x[:n] + 1j * x[n:]


def real_split_matrix(ymat: np.ndarray, c: np.ndarray, d: np.ndarray, v0: np.ndarray,
                      pv: np.ndarray) -> np.ndarray:
    """Rows of ``c_i (ymat V)_i + d_i conj(V_i)`` split into real/imag parts.

    ``ymat`` is the reduced matrix; ``c``, ``d``, ``v0`` and ``pv`` are
    non-slack vectors. PV rows of the lower half are replaced by the
    magnitude linearisation ``2 Re(conj(v0_i) V_i)``.
    """
    cm = c[:, None] * ymat
    top = np.hstack([cm.real + np.diag(d.real), -cm.imag + np.diag(d.imag)])
    bottom = np.hstack([cm.imag + np.diag(d.imag), cm.real - np.diag(d.real)])
    idx = np.flatnonzero(pv)
    bottom[idx] = 0.0
    n = len(c)
    bottom[idx, idx] = 2 * v0[idx].real
    bottom[idx, n + idx] = 2 * v0[idx].imag
    return np.vstack([top, bottom])


def factor_block(matrix: np.ndarray, rtol: float = 1e-10) -> BlockSystem:
    lu = scipy.linalg.lu_factor(matrix)
    piv = np.abs(np.diag(lu[0]))
    system = BlockSystem(matrix, lu, float(piv.min()), float(piv.max()))
    if not system.min_pivot > rtol * system.max_pivot:
        raise CiftError(f"block matrix singular at the seed (smallest pivot {system.min_pivot:.3e})")
    return system


def _coupling(net: Network, adm: AdmittanceMatrix, spec: EmbeddingSpec):
    """Matrix, c, d of the linear part for the given model (non-slack)."""
    v0 = spec.seed
    if spec.model is ModelTag.SUBR2:
        ymat = adm.full - np.diag(adm.row_sums)
        a = np.zeros_like(v0)
    else:
        ymat = adm.full
        a = spec.a
    c = np.conj(v0[1:])
    d = (ymat @ v0)[1:] - a[1:]
    return ymat, c, d


def assemble_block(net: Network, adm: AdmittanceMatrix, spec: EmbeddingSpec) -> BlockSystem:
    if spec.model is ModelTag.SUBR1:
        raise ValueError("SUBR1 is solved as a complex system, not a real block")
    ymat, c, d = _coupling(net, adm, spec)
    mat = real_split_matrix(ymat[1:, 1:], c, d, spec.seed[1:], net.pv[1:])
    return factor_block(mat)


# ---------------------------------------------------------------------------
# recurrences

@dataclass
class _State:
    """Series kept alongside V while a recurrence runs."""

    current: np.ndarray  # Y V (or Y_trans V for SUBR2)
    w: np.ndarray | None = None
    vsq: np.ndarray | None = None  # V**2 (SUBR1)
    shunt: np.ndarray | None = None  # SUBR2 shunt admittance diag(Y_sh)
    shunt_g: np.ndarray | None = None  # its conductance as used in PV rows


def _power_rhs_general(s, spec: EmbeddingSpec, v, cur, n):
    if n == 1:
        return np.conj(s) - np.conj(spec.seed) * spec.a - spec.b
    return -convolve_columns(np.conj(v[:n]), cur[:n], n, start=1) - np.conj(v[n - 1]) * spec.a


def _magnitude_rhs(spec: EmbeddingSpec, v, n):
    r = spec.path_squared_coeff(n).astype(complex)
    if n >= 2:
        r = r - convolve_columns(np.conj(v[:n]), v[:n], n, start=1)
    return r.real


def next_coefficient_pv(net: Network, block: BlockSystem, spec: EmbeddingSpec,
                        bundle: SeriesBundle, state: _State, n: int, ymat: np.ndarray) -> None:
    """Fill ``V[n]`` for Models 1-4 and SUBR2 using the cached block."""
    v, cur = bundle.v, state.current
    s = net.injections
    pv = net.pv
    if spec.model is ModelTag.SUBR2:
        g = state.shunt_g
        vvbar = convolve_columns(np.conj(v[:n]), v[:n], n - 1)
        # PQ: Y_t V = z S* / V* - z Y_sh V ; PV: Re(V* Y_t V) = z P - z G_sh |V|^2
        r = np.conj(s) * np.conj(state.w[n - 1]) - state.shunt * v[n - 1]
        lin = -convolve_columns(np.conj(v[:n]), cur[:n], n, start=1) if n >= 2 else 0.0
        r_pv = (s.real * (n == 1) - g * vvbar.real) + np.real(lin)
        r = np.where(pv, r_pv, r)
    else:
        r = _power_rhs_general(s, spec, v, cur, n)
    top = r.real[1:]
    bottom = np.where(pv, _magnitude_rhs(spec, v, n), r.imag)[1:]
    v[n, 0] = 0.0
    v[n, 1:] = block.solve(np.concatenate([top, bottom]))
    cur[n] = ymat[:, 1:] @ v[n, 1:]
    if state.w is not None:
        state.w[n] = reciprocal_next_columns(v, state.w, n)


def next_coefficient_subr1(net: Network, lu, adm: AdmittanceMatrix, spec: EmbeddingSpec,
                           bundle: SeriesBundle, state: _State, n: int) -> None:
    """Fill ``V[n]`` and ``Vbar[n]`` for the triple-product PV embedding.

    PV rows:  M^2 Y V = 2 z P V + (1 - z) M^2 y - z V^2 (conj(Y) Vbar)
    PQ rows:  Y V - (1 - z) y = z S* / Vbar

    ``Vbar`` is the reflected series at PQ buses. At PV buses it comes from
    the magnitude path, ``Vbar = L^2(z) / V``, which is what pins the
    magnitude; without it the PV rows also admit solutions with ``Q = 0``.
    ``state.current`` holds ``conj(Y) Vbar``.
    """
    v, vbar, w, vsq, cur_bar = bundle.v, bundle.vbar, state.w, state.vsq, state.current
    s = net.injections
    pv = net.pv
    y = adm.row_sums
    msq = net.v_targets**2
    # double convolution: (V^2 conj(Y) Vbar)[n-1]
    triple = convolve_columns(vsq[:n], cur_bar[:n], n - 1)
    r_pv = (2 * s.real * v[n - 1] - triple) / msq - y * (n == 1)
    r_pq = np.conj(s) * np.conj(w[n - 1]) - y * (n == 1)
    rhs = np.where(pv, r_pv, r_pq)
    v[n, 0] = 0.0
    v[n, 1:] = scipy.linalg.lu_solve(lu, rhs[1:])
    w[n] = reciprocal_next_columns(v, w, n)
    vsq[n] = convolve_columns(v[: n + 1], v[: n + 1], n)
    # (L^2 W)[n]; L^2 has degree 2
    k = min(n, 2)
    from_path = np.einsum("m...,m...->...", spec.path_squared()[: k + 1], w[n - k: n + 1][::-1])
    vbar[n] = np.where(pv, from_path, np.conj(v[n]))
    cur_bar[n] = np.conj(adm.full) @ vbar[n]


def pv_series(net: Network, adm: AdmittanceMatrix, spec: EmbeddingSpec, order: int,
              subr2_footnote: bool = False) -> SeriesBundle:
    """Voltage series through ``order`` for a normalized network."""
    if abs(net.slack_voltage - 1) > 1e-14:
        raise CaseError("network must be normalized to a unit slack voltage")
    res = seed_residual(net, adm, spec)
    if res > 1e-10:
        raise DegenerateSeedError(f"seed does not satisfy the z=0 equations (residual {res:.2e})")
    nb = net.n_bus
    shape = (order + 1, nb)
    bundle = SeriesBundle(np.zeros(shape, dtype=complex))
    bundle.v[0] = spec.seed
    if spec.model is ModelTag.SUBR1:
        lu = scipy.linalg.lu_factor(adm.reduced)
        bundle.factorizations = 1
        bundle.w = np.zeros(shape, dtype=complex)
        bundle.vbar = np.zeros(shape, dtype=complex)
        state = _State(np.zeros(shape, dtype=complex), bundle.w, np.zeros(shape, dtype=complex))
        bundle.w[0] = 1.0 / bundle.v[0]
        bundle.vbar[0] = np.conj(bundle.v[0])
        state.current[0] = np.conj(adm.full) @ bundle.vbar[0]
        state.vsq[0] = bundle.v[0] ** 2
        for n in range(1, order + 1):
            next_coefficient_subr1(net, lu, adm, spec, bundle, state, n)
        return bundle

    block = assemble_block(net, adm, spec)
    bundle.factorizations = 1
    ymat, _, _ = _coupling(net, adm, spec)
    state = _State(np.zeros(shape, dtype=complex))
    state.current[0] = ymat @ bundle.v[0]
    if spec.model is ModelTag.SUBR2:
        bundle.w = np.zeros(shape, dtype=complex)
        bundle.w[0] = 1.0 / bundle.v[0]
        state.w = bundle.w
        state.shunt = adm.row_sums
        state.shunt_g = adm.row_sums.real.copy()
        if subr2_footnote:
            state.shunt_g[net.pv] = 0.0
    for n in range(1, order + 1):
        next_coefficient_pv(net, block, spec, bundle, state, n, ymat)
    return bundle
