import functools

import numpy as np
import pytest

from helmflow.netmodel import Branch, Bus, BusKind, load_case, make_network

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def cached_case(name: str):
    return load_case(name)


@pytest.fixture
def case():
    return cached_case


def two_bus_pq(p=-0.5, q=-0.2, z=0.02 + 0.1j):
    """Slack feeding one load through a single line."""
    buses = [Bus(1, BusKind.SLACK, v_mag_target=1.0), Bus(2, BusKind.PQ, p, q)]
    return make_network(buses, [Branch(1, 2, z)], name="two-bus-pq")


def two_bus_pv(p=0.4, m=1.03, x=0.2, b_sh=0.1):
    """Slack and a PV bus joined by a lossless line, with a shunt at the PV bus."""
    buses = [Bus(1, BusKind.SLACK, v_mag_target=1.0), Bus(2, BusKind.PV, p, 0.0, m, 1j * b_sh)]
    return make_network(buses, [Branch(1, 2, 1j * x)], name="two-bus-pv")


def two_bus_pq_exact(p, q, z):
    """High-voltage root of ``|U|^2 - U = S conj(Z)`` (slack at 1)."""
    c = (p + 1j * q) * np.conj(z)
    b = -c.imag
    a = (1 + np.sqrt(1 - 4 * (b * b - c.real))) / 2
    return a + 1j * b


def two_bus_pv_exact(p, m, x, b_sh):
    """PV voltage and reactive output for the lossless line with a shunt."""
    u = np.sqrt(m * m - (p * x) ** 2) + 1j * p * x
    q = (m * m - u.real) / x - b_sh * m * m
    return u, q


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
