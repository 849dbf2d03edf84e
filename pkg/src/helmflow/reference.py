"""Conventional load-flow tools used as independent checks.

``newton_solve`` is a polar Newton-Raphson solver with the usual
``dS/dVa`` and ``dS/d|V|`` Jacobian blocks. ``trace_homotopy`` follows a
solution as all injections are scaled by a real parameter, and
``stability_dqdv`` applies the dQ/dV sensitivity test at a PQ bus.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import AdmittanceMatrix, BusKind, Network, build_ybus


class NewtonError(ArithmeticError):
    pass


class SingularJacobianError(NewtonError):
    pass


class NonConvergenceError(NewtonError):
    """Newton stopped without meeting the tolerance. This is not proof that
    no solution exists."""


@dataclass
class NewtonSolution:
    voltages: np.ndarray
    iterations: int
    max_mismatch: float


def flat_start(net: Network) -> np.ndarray:
    """Unit magnitudes at PQ buses, setpoints elsewhere, zero angles except the slack."""
    v = np.where(net.pq, 1.0, net.v_targets).astype(complex)
    v[0] = net.slack_voltage
    return v


def case_start(net: Network) -> np.ndarray:
    """The starting profile stored in the case file, with setpoints enforced."""
    v = np.array([b.v_init for b in net.buses], dtype=complex)
    pv = net.pv
    v[pv] = net.v_targets[pv] * np.exp(1j * np.angle(v[pv]))
    v[0] = net.slack_voltage
    return v


def _mismatch(ymat: np.ndarray, v: np.ndarray, s: np.ndarray, pvpq, pq) -> np.ndarray:
    mis = v * np.conj(ymat @ v) - s
    return np.concatenate([mis[pvpq].real, mis[pq].imag])


def _jacobian(ymat: np.ndarray, v: np.ndarray, pvpq, pq) -> np.ndarray:
    ibus = ymat @ v
    vnorm = v / np.abs(v)
    ds_dvm = v[:, None] * np.conj(ymat * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(ibus) - ymat * v[None, :])
    return np.block([
        [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
        [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
    ])


def newton_solve(net: Network, y: AdmittanceMatrix | None = None, start: np.ndarray | None = None,
                 tol: float = 1e-10, max_iter: int = 30, scale: float = 1.0) -> NewtonSolution:
    """Solve ``V_i conj((Y V)_i) = scale * S_i`` at every non-slack bus.

    PV magnitudes are held at their setpoints and the slack voltage is fixed.
    ``tol`` bounds the largest real or reactive power mismatch (p.u.).
    """
    y = build_ybus(net) if y is None else y
    ymat = y.full
    s = scale * net.injections
    pv, pq = np.flatnonzero(net.pv), np.flatnonzero(net.pq)
    pvpq = np.concatenate([pv, pq])
    v = flat_start(net) if start is None else np.array(start, dtype=complex)
    v[0] = net.slack_voltage
    v[pv] = net.v_targets[pv] * np.exp(1j * np.angle(v[pv]))
    va, vm = np.angle(v), np.abs(v)
    f = _mismatch(ymat, v, s, pvpq, pq)
    for it in range(max_iter + 1):
        err = float(np.max(np.abs(f), initial=0.0))
        if not np.isfinite(err):
            raise NonConvergenceError(f"mismatch became non-finite after {it} iterations")
        if err <= tol:
            return NewtonSolution(v, it, err)
        if it == max_iter:
            break
        jac = _jacobian(ymat, v, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(f"singular Jacobian at iteration {it}")
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        v = vm * np.exp(1j * va)
        f = _mismatch(ymat, v, s, pvpq, pq)
    raise NonConvergenceError(f"no convergence in {max_iter} iterations (mismatch {err:.3e})")


def solution_q(net: Network, y: AdmittanceMatrix, voltages: np.ndarray) -> dict[int, float]:
    """Net reactive injection at every bus implied by ``voltages``."""
    s = voltages * np.conj(y.full @ voltages)
    return {b.id: float(s[k].imag) for k, b in enumerate(net.buses)}


# ---------------------------------------------------------------------------
# homotopy

@dataclass
class HomotopyTrace:
    z: list[float] = field(default_factory=list)
    voltages: list[np.ndarray] = field(default_factory=list)
    completed: bool = False

    @property
    def reached(self) -> float:
        return self.z[-1]

    def export(self, path: str | Path, bus_ids) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["z", "bus", "abs_v"])
            for z, v in zip(self.z, self.voltages):
                for bid, vk in zip(bus_ids, v):
                    out.writerow([repr(z), bid, repr(float(abs(vk)))])


def trace_homotopy(net: Network, y: AdmittanceMatrix | None, start: np.ndarray,
                   z_from: float = 1.0, z_to: float = 0.0, step: float = 0.05,
                   min_step: float = 1e-4, tol: float = 1e-10, max_iter: int = 15) -> HomotopyTrace:
    """Follow the solution of ``V conj(Y V) = z S`` from ``z_from`` to ``z_to``.

    Each point is a Newton correction from the previous profile. A failed
    correction halves the step; the trace stops early once the step would
    drop below ``min_step``.
    """
    y = build_ybus(net) if y is None else y
    try:
        sol = newton_solve(net, y, start, tol, max_iter, scale=z_from)
    except NewtonError as exc:
        raise NonConvergenceError(f"start profile does not solve the system at z={z_from}") from exc
    trace = HomotopyTrace([z_from], [sol.voltages])
    direction = np.sign(z_to - z_from)
    z, v, h = z_from, sol.voltages, step
    while direction * (z_to - z) > 1e-15:
        z_next = z + direction * min(h, abs(z_to - z))
        try:
            sol = newton_solve(net, y, v, tol, max_iter, scale=z_next)
        except NewtonError:
            h /= 2
            if h < min_step:
                return trace
            continue
        z, v = z_next, sol.voltages
        trace.z.append(z)
        trace.voltages.append(v)
    trace.completed = True
    return trace


# ---------------------------------------------------------------------------
# stability

class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    INDETERMINATE = "indeterminate"


@dataclass
class StabilityResult:
    bus: int
    verdict: Stability
    sensitivity: float  # d|V| / d(extra reactive demand)


def stability_dqdv(net: Network, y: AdmittanceMatrix | None, voltages: np.ndarray, bus: int,
                   dq: float = 1e-5, tol: float = 1e-12) -> StabilityResult:
    """Raise the reactive demand at ``bus`` by ``dq`` and look at how |V| moves.

    At a stable operating point extra demand lowers the voltage magnitude.
    The perturbed case is re-solved by Newton from ``voltages``.
    """
    y = build_ybus(net) if y is None else y
    k = net.index_of(bus)
    if net.buses[k].kind is not BusKind.PQ:
        raise ValueError(f"bus {bus} is not a PQ bus")
    s = net.injections.copy()
    s[k] -= 1j * dq
    try:
        base = newton_solve(net, y, voltages, tol, 20).voltages
        pert = newton_solve(net.with_injections(s), y, base, tol, 20).voltages
    except NewtonError:
        return StabilityResult(bus, Stability.INDETERMINATE, float("nan"))
    sens = (abs(pert[k]) - abs(base[k])) / dq
    return StabilityResult(bus, Stability.STABLE if sens < 0 else Stability.UNSTABLE, float(sens))
