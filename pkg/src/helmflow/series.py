"""Complex power series: storage, Cauchy products and reciprocal recurrences.

Coefficients are kept densely in ascending powers. The solvers hold many
series at once as a 2-D array of shape ``(order + 1, n_bus)``; the helpers
with a ``_columns`` suffix work column-wise on such arrays.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SeriesError(ValueError):
    pass


@dataclass(frozen=True)
class PowerSeries:
    """Truncated series ``sum(c[n] z**n for n <= n_max)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=complex).ravel())

    @property
    def n_max(self) -> int:
        return len(self.coeffs) - 1

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, n):
        return self.coeffs[n]

    def __call__(self, z):
        """Direct (Horner) summation of the truncated series."""
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    def __mul__(self, other: "PowerSeries") -> "PowerSeries":
        if len(other) != len(self):
            raise SeriesError(f"length mismatch: {len(self)} vs {len(other)}")
        return PowerSeries([convolve(self, other, n) for n in range(len(self))])

    def conj(self) -> "PowerSeries":
        return PowerSeries(np.conj(self.coeffs))

    def reciprocal(self) -> "PowerSeries":
        w = np.zeros_like(self.coeffs)
        for n in range(len(self)):
            w[n] = reciprocal_coefficient(self, w[:n], n)
        return PowerSeries(w)


def convolve(a, b, n: int) -> complex:
    """Coefficient ``n`` of the Cauchy product of ``a`` and ``b``."""
    a = np.asarray(a.coeffs if isinstance(a, PowerSeries) else a)
    b = np.asarray(b.coeffs if isinstance(b, PowerSeries) else b)
    if n < 0 or n >= len(a) or n >= len(b):
        raise SeriesError(f"order {n} exceeds available coefficients ({len(a)}, {len(b)})")
    return complex(np.dot(a[: n + 1], b[n::-1]))


def reciprocal_coefficient(v, w_prefix, n: int) -> complex:
    """Coefficient ``n`` of ``W = 1/V`` given ``W[0..n-1]``."""
    v = np.asarray(v.coeffs if isinstance(v, PowerSeries) else v)
    w_prefix = np.asarray(w_prefix.coeffs if isinstance(w_prefix, PowerSeries) else w_prefix)
    if v[0] == 0:
        raise ZeroDivisionError("series has zero constant term (degenerate seed)")
    if n == 0:
        return 1.0 / complex(v[0])
    if len(w_prefix) < n or len(v) <= n:
        raise SeriesError(f"need W[0..{n - 1}] and V[0..{n}]")
    return complex(-np.dot(v[n:0:-1], w_prefix[:n]) / v[0])


def convolve_columns(a: np.ndarray, b: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Per-column ``sum(a[m] * b[n - m] for m in range(start, n - start + 1))``."""
    if n - start < start:
        return np.zeros(a.shape[1:], dtype=np.result_type(a, b))
    return np.einsum("m...,m...->...", a[start: n - start + 1], b[n - start: start - 1 if start else None: -1])


def reciprocal_next_columns(v: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    """Per-column ``W[n]`` of ``1/V`` from ``V[0..n]`` and ``W[0..n-1]``."""
    if n == 0:
        return 1.0 / v[0]
    return -np.einsum("m...,m...->...", v[n:0:-1], w[:n]) / v[0]


def export_magnitudes(path: str | Path, coeffs: np.ndarray, bus_ids) -> None:
    """Write ``|V_i[n]|`` as CSV rows ``(bus, n, magnitude)``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["bus", "n", "abs_coeff"])
        for j, bid in enumerate(bus_ids):
            for n, c in enumerate(coeffs[:, j]):
                out.writerow([bid, n, repr(float(abs(c)))])


@dataclass
class SeriesBundle:
    """Voltage series for every bus, slack included in column 0.

    ``vbar`` is only filled by two-track recurrences and ``w`` only by
    recurrences that need ``1/V``. ``factorizations`` counts the matrix
    factorizations performed while generating the coefficients.
    """

    v: np.ndarray
    vbar: np.ndarray | None = None
    w: np.ndarray | None = None
    factorizations: int = 0

    def __post_init__(self):
        for arr in (self.vbar, self.w):
            if arr is not None and arr.shape != self.v.shape:
                raise SeriesError("all member series must share one order")

    @property
    def order(self) -> int:
        return self.v.shape[0] - 1

    def series(self, k: int) -> PowerSeries:
        return PowerSeries(self.v[:, k])
