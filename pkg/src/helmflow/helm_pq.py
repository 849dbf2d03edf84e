"""Holomorphic embedding for networks with only PQ buses.

Two embeddings are provided. The canonical one scales the injections by
``z``; its seed solves ``Y' V[0] = -Y_slack``. The alternative one adds
``-(1 - z) y_i`` to each balance row so that ``V(0) = 1`` everywhere.
Both assume the slack voltage is 1 (see ``Network.normalized``).
"""
from __future__ import annotations

import enum

import numpy as np
import scipy.linalg

from .netmodel import AdmittanceMatrix, CaseError, Network
from .series import SeriesBundle, reciprocal_next_columns


class DegenerateSeedError(ArithmeticError):
    pass


class PqEmbeddingKind(enum.Enum):
    CANONICAL = "canonical"
    ALTERNATIVE = "alternative"


def _factor(adm: AdmittanceMatrix):
    return scipy.linalg.lu_factor(adm.reduced)


def solve_seed_pq(adm: AdmittanceMatrix, kind: PqEmbeddingKind, lu=None) -> np.ndarray:
    """Return ``V[0]`` for all buses (slack first)."""
    n = adm.full.shape[0]
    if kind is PqEmbeddingKind.ALTERNATIVE:
        return np.ones(n, dtype=complex)
    lu = _factor(adm) if lu is None else lu
    v0 = np.empty(n, dtype=complex)
    v0[0] = 1.0
    v0[1:] = scipy.linalg.lu_solve(lu, -adm.slack_column)
    small = np.flatnonzero(np.abs(v0) < 1e-8)
    if small.size:
        raise DegenerateSeedError(f"seed voltage vanishes at matrix index {small.tolist()}")
    return v0


def next_coefficient_pq(adm: AdmittanceMatrix, s: np.ndarray, bundle: SeriesBundle, n: int,
                        kind: PqEmbeddingKind, lu) -> None:
    """Fill ``V[n]`` and ``W[n]`` in place from the lower orders."""
    v, w = bundle.v, bundle.w
    rhs = np.conj(s[1:]) * np.conj(w[n - 1, 1:])
    if kind is PqEmbeddingKind.ALTERNATIVE and n == 1:
        rhs = rhs - adm.row_sums[1:]
    v[n, 0] = 0.0
    v[n, 1:] = scipy.linalg.lu_solve(lu, rhs)
    w[n] = reciprocal_next_columns(v, w, n)


def pq_series(net: Network, adm: AdmittanceMatrix, order: int,
              kind: PqEmbeddingKind = PqEmbeddingKind.CANONICAL) -> SeriesBundle:
    """Voltage series through ``order`` for a normalized PQ-only network."""
    if net.pv.any():
        raise CaseError("the PQ-only embedding cannot handle PV buses")
    if abs(net.slack_voltage - 1) > 1e-14:
        raise CaseError("network must be normalized to a unit slack voltage")
    lu = _factor(adm)
    nb = net.n_bus
    bundle = SeriesBundle(np.zeros((order + 1, nb), dtype=complex),
                          w=np.zeros((order + 1, nb), dtype=complex), factorizations=1)
    bundle.v[0] = solve_seed_pq(adm, kind, lu)
    bundle.w[0] = 1.0 / bundle.v[0]
    s = net.injections
    for n in range(1, order + 1):
        next_coefficient_pq(adm, s, bundle, n, kind, lu)
    return bundle


def embedded_residual_pq(net: Network, adm: AdmittanceMatrix, kind: PqEmbeddingKind,
                         v: np.ndarray, z: complex) -> np.ndarray:
    """Residual of the embedded balance at ``z`` for voltages ``v``.

    Uses the reflected form ``V*(z*)`` so it is exact for real ``z``.
    """
    lhs = adm.full[1:] @ v
    if kind is PqEmbeddingKind.ALTERNATIVE:
        lhs = lhs - (1 - z) * adm.row_sums[1:]
    return lhs - z * np.conj(net.injections[1:]) / np.conj(v[1:])

