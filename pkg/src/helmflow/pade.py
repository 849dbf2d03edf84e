"""Padé approximants of power series and their denominator zeros.

The default construction expands the series as the continued fraction

    f(z) = a0 + z / (a1 + z / (a2 + ...))

with Viskovatov's two-row scheme, which peels off one term at a time
using only multiplications and subtractions of series. Convergent ``2n`` of
that fraction is the ``[n/n]`` approximant. A direct linear solve for the denominator
coefficients is kept as an independent cross-check.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from .series import PowerSeries, reciprocal_next_columns

PIVOT_RTOL = 1e-13


class PadeError(ArithmeticError):
    pass


class PoleError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PadeApproximant:
    """``num(z) / den(z)`` with ``den(0) == 1``; coefficients ascending."""

    num: np.ndarray
    den: np.ndarray
    l: int
    m: int
    method: str = "viskovatov"
    truncated: bool = False

    def __call__(self, z):
        return evaluate(self, z)

    def taylor(self, order: int) -> np.ndarray:
        """Expand ``num/den`` as a power series through ``order``."""
        num = np.zeros(order + 1, dtype=complex)
        k = min(order + 1, len(self.num))
        num[:k] = self.num[:k]
        out = np.zeros(order + 1, dtype=complex)
        for n in range(order + 1):
            acc = num[n]
            for j in range(1, min(n, len(self.den) - 1) + 1):
                acc -= self.den[j] * out[n - j]
            out[n] = acc / self.den[0]
        return out


def _coeffs(series) -> np.ndarray:
    if isinstance(series, PowerSeries):
        return series.coeffs
    return np.asarray(series, dtype=complex).ravel()


def _reciprocal(c: np.ndarray) -> np.ndarray:
    if c[0] == 0:
        raise PadeError("series has zero constant term")
    v = c[:, None]
    w = np.zeros_like(v)
    for n in range(len(c)):
        w[n] = reciprocal_next_columns(v, w, n)
    return w[:, 0]


def _cf_terms(c: np.ndarray, depth: int) -> tuple[list[complex], bool]:
    """Continued-fraction terms ``a0..a_depth`` (fewer if a pivot degenerates).

    The k-th tail is held as a ratio ``A/B`` of two series and advanced by
    ``A, B <- B, (A - a_k B) / z``. Avoiding explicit series inversion keeps
    rounding errors from compounding when a term is small.
    """
    num = c[: depth + 1].astype(complex)
    den = np.zeros_like(num)
    den[0] = 1.0
    terms = []
    while True:
        a = num[0] / den[0]
        terms.append(a)
        rest = (num - a * den)[1:]
        if len(terms) > depth or len(rest) == 0:
            return terms, False
        if not np.any(rest):
            return terms, False  # the fraction terminates exactly
        if abs(rest[0]) < PIVOT_RTOL * max(abs(num[0]), abs(den[0])):
            return terms, True
        num, den = den[: len(rest)], rest
        scale = np.max(np.abs(den))
        num, den = num / scale, den / scale


def _convergent(terms: list[complex]) -> tuple[np.ndarray, np.ndarray]:
    a_prev, a_cur = np.array([1.0 + 0j]), np.array([terms[0]], dtype=complex)
    b_prev, b_cur = np.array([0j]), np.array([1.0 + 0j])
    for t in terms[1:]:
        a_next = npoly.polyadd(t * a_cur, np.concatenate([[0], a_prev]))
        b_next = npoly.polyadd(t * b_cur, np.concatenate([[0], b_prev]))
        s = np.max(np.abs(b_next))
        a_prev, a_cur = a_cur / s, a_next / s
        b_prev, b_cur = b_cur / s, b_next / s
    return a_cur, b_cur


def _viskovatov_diagonal(c: np.ndarray, m: int):
    terms, truncated = _cf_terms(c, 2 * m)
    p, q = _convergent(terms)
    return p / q[0], q / q[0], truncated


def _trim(p: np.ndarray) -> np.ndarray:
    """Drop trailing coefficients that are exactly zero."""
    k = len(p)
    while k > 1 and p[k - 1] == 0:
        k -= 1
    return p[:k]


def _viskovatov(c: np.ndarray, l: int, m: int):
    if m == 0:
        return c[: l + 1].copy(), np.array([1.0 + 0j]), False
    if l >= m:
        d = l - m
        p, q, truncated = _viskovatov_diagonal(c[d: l + m + 1], m)
        num = npoly.polyadd(npoly.polymul(c[:d], q) if d else np.zeros(1),
                            np.concatenate([np.zeros(d, dtype=complex), p]))
        return num, q, truncated
    r = _reciprocal(c[: l + m + 1])
    p, q, truncated = _viskovatov(r, m, l)
    return q / p[0], p / p[0], truncated


def _toeplitz(c: np.ndarray, l: int, m: int):
    def cc(k):
        return c[k] if k >= 0 else 0.0

    if m == 0:
        return c[: l + 1].copy(), np.array([1.0 + 0j])
    mat = np.array([[cc(l + k - j) for j in range(1, m + 1)] for k in range(1, m + 1)],
                   dtype=complex)
    rhs = -np.array([c[l + k] for k in range(1, m + 1)], dtype=complex)
    try:
        qtail = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise PadeError(f"singular Toeplitz block for [{l}/{m}]") from exc
    q = np.concatenate([[1.0], qtail])
    p = np.array([sum(q[j] * c[i - j] for j in range(min(i, m) + 1)) for i in range(l + 1)])
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise PadeError(f"non-finite Toeplitz solution for [{l}/{m}]")
    return p, q


def build_pade(series, l: int, m: int, method: str = "viskovatov") -> PadeApproximant:
    """Construct the ``[l/m]`` approximant from at least ``l + m + 1`` coefficients.

    With the Viskovatov method a near-zero pivot stops the continued fraction
    early; the returned approximant then has ``truncated=True`` and the
    degrees actually reached in ``l`` and ``m``.
    """
    c = _coeffs(series)
    if len(c) < l + m + 1:
        raise PadeError(f"[{l}/{m}] needs {l + m + 1} coefficients, got {len(c)}")
    if method not in ("viskovatov", "toeplitz"):
        raise ValueError(f"unknown Padé method {method!r}")
    if not np.any(c[1: l + m + 1]):
        # constant series (the slack bus): exact for every order
        return PadeApproximant(c[:1].copy(), np.ones(1, dtype=complex), 0, 0, method)
    if method == "viskovatov":
        p, q, truncated = _viskovatov(c, l, m)
    else:
        (p, q), truncated = _toeplitz(c, l, m), False
    p, q = _trim(p), _trim(q)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise PadeError(f"non-finite coefficients building [{l}/{m}]")
    return PadeApproximant(p, q, len(p) - 1 if truncated else l, len(q) - 1 if truncated else m,
                           method, truncated)


def _horner(coeffs: np.ndarray, z):
    acc = np.zeros_like(np.asarray(z, dtype=complex))
    for c in coeffs[::-1]:
        acc = acc * z + c
    return acc


def evaluate(pa: PadeApproximant, z):
    """``P(z)/Q(z)`` by Horner's rule."""
    den = _horner(pa.den, z)
    if np.any(np.abs(den) < 1e-300):
        raise PoleError(f"approximant evaluated at a pole (z={z})")
    out = _horner(pa.num, z) / den
    return complex(out) if np.ndim(out) == 0 else out


def evaluate_buses(coeffs: np.ndarray, l: int, m: int, z: complex = 1.0,
                   method: str = "viskovatov") -> np.ndarray:
    """Approximant value at ``z`` for every column of ``coeffs``."""
    return np.array([evaluate(build_pade(coeffs[:, k], l, m, method), z)
                     for k in range(coeffs.shape[1])])


# ---------------------------------------------------------------------------
# singularities

@dataclass
class SingularityMap:
    bus: int
    order: tuple[int, int]
    roots: np.ndarray
    spurious: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def genuine(self) -> np.ndarray:
        return self.roots[~self.spurious]


def polynomial_roots(coeffs: np.ndarray) -> np.ndarray:
    """Zeros of an ascending-coefficient polynomial via companion eigenvalues.

    Each eigenvalue gets one Newton step, kept only if it lowers ``|p|``.
    """
    c = np.asarray(coeffs, dtype=complex)
    scale = np.max(np.abs(c))
    k = len(c)
    while k > 1 and abs(c[k - 1]) <= 1e-14 * scale:
        k -= 1
    c = c[:k]
    if k <= 1:
        return np.zeros(0, dtype=complex)
    try:
        roots = np.linalg.eigvals(npoly.polycompanion(c))
    except np.linalg.LinAlgError as exc:
        raise PadeError("companion eigenvalue iteration did not converge") from exc
    dc = npoly.polyder(c)
    f = npoly.polyval(roots, c)
    df = npoly.polyval(roots, dc)
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = roots - f / df
    better = np.isfinite(polished) & (np.abs(npoly.polyval(polished, c)) < np.abs(f))
    return np.where(better, polished, roots)


def denominator_roots(pa: PadeApproximant, bus: int = -1,
                      neighbour: PadeApproximant | None = None,
                      doublet_tol: float = 1e-8, neighbour_tol: float = 1e-2) -> SingularityMap:
    """Zeros of the denominator with a spurious-pole flag for each.

    A pole is flagged when a numerator zero lies within ``doublet_tol`` of it
    (Froissart doublet) or, if ``neighbour`` is given, when the neighbouring
    approximant has no pole within ``neighbour_tol``.
    """
    if pa.m < 1:
        raise PadeError("denominator has no zeros (m = 0)")
    roots = polynomial_roots(pa.den)
    zeros = polynomial_roots(pa.num) if len(pa.num) > 1 else np.zeros(0, dtype=complex)
    spurious = np.zeros(len(roots), dtype=bool)
    if zeros.size:
        spurious |= np.min(np.abs(roots[:, None] - zeros[None, :]), axis=1) < doublet_tol
    if neighbour is not None:
        other = polynomial_roots(neighbour.den)
        if other.size:
            spurious |= np.min(np.abs(roots[:, None] - other[None, :]), axis=1) >= neighbour_tol
        else:
            spurious[:] = True
    return SingularityMap(bus, (pa.l, pa.m), roots, spurious)


def growth_radius(series) -> float:
    """Radius ``rho <= 1`` from a log-linear fit of ``|c[n]|``.

    Substituting ``z = rho t`` keeps the coefficients of a fast-growing
    series near unit size, which root finding needs in double precision.
    """
    c = _coeffs(series)
    n = np.flatnonzero(np.abs(c[1:]) > 0) + 1
    if len(n) < 2:
        return 1.0
    slope = np.polyfit(n, np.log(np.abs(c[n])), 1)[0]
    return float(min(1.0, np.exp(-slope)))


def singularity_map(series, l: int, m: int, bus: int = -1,
                    method: str = "viskovatov", rescale: bool = True) -> SingularityMap:
    """Denominator zeros of ``[l/m]`` checked against ``[l-1/m-1]``.

    With ``rescale`` the approximants are built for ``f(rho t)`` and the
    roots mapped back to ``z``; the spurious-pole tolerances then apply in
    the scaled variable.
    """
    c = _coeffs(series)
    rho = growth_radius(c) if rescale else 1.0
    c = c * rho ** np.arange(len(c))
    pa = build_pade(c, l, m, method)
    nb = build_pade(c, l - 1, m - 1, method) if min(l, m) >= 1 else None
    sm = denominator_roots(pa, bus, nb)
    sm.roots = sm.roots * rho
    return sm


def export_singularities(path: str | Path, maps: list[SingularityMap]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["bus", "re", "im", "spurious"])
        for sm in maps:
            for r, s in zip(sm.roots, sm.spurious):
                out.writerow([sm.bus, repr(float(r.real)), repr(float(r.imag)), int(s)])
