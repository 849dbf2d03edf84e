"""Network data model, MatPower/JSON case I/O and bus admittance assembly.

Buses are stored with the slack bus first; every other bus keeps its order
from the case file. Matrix index ``k`` therefore always refers to
``network.buses[k]`` and index 0 is the slack.
"""
from __future__ import annotations

import enum
import json
import re
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg


class CaseError(ValueError):
    """Malformed case data or a network that violates a modelling invariant."""


class AdmittanceError(CaseError):
    """The slack-reduced admittance matrix is singular."""


class BusKind(enum.Enum):
    SLACK = "slack"
    PQ = "pq"
    PV = "pv"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_inj: float = 0.0
    q_inj: float = 0.0
    v_mag_target: float = 1.0  # PV and slack only
    shunt: complex = 0j
    v_angle: float = 0.0  # radians, slack only
    v_init: complex = 1 + 0j  # starting point stored in the case


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_impedance: complex
    line_charging: float = 0.0
    tap_ratio: complex = 1 + 0j
    status: bool = True


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index_of(self, bus_id: int) -> int:
        for k, b in enumerate(self.buses):
            if b.id == bus_id:
                return k
        raise KeyError(bus_id)

    @property
    def slack_voltage(self) -> complex:
        s = self.buses[0]
        return s.v_mag_target * np.exp(1j * s.v_angle)

    @property
    def injections(self) -> np.ndarray:
        return np.array([b.p_inj + 1j * b.q_inj for b in self.buses])

    @property
    def v_targets(self) -> np.ndarray:
        return np.array([b.v_mag_target for b in self.buses])

    def mask(self, kind: BusKind) -> np.ndarray:
        return np.array([b.kind is kind for b in self.buses])

    @property
    def pq(self) -> np.ndarray:
        return self.mask(BusKind.PQ)

    @property
    def pv(self) -> np.ndarray:
        return self.mask(BusKind.PV)

    def with_injections(self, s: np.ndarray) -> "Network":
        buses = [replace(b, p_inj=float(np.real(v)), q_inj=float(np.imag(v)))
                 for b, v in zip(self.buses, s)]
        return replace(self, buses=tuple(buses))

    def normalized(self) -> tuple["Network", complex]:
        """Return the equivalent network whose slack voltage is exactly 1.

        With ``V = Vs * V'`` the balance ``Y V = S*/V*`` becomes
        ``Y V' = (S/|Vs|^2)* / V'*``, so injections scale by ``1/|Vs|^2`` and
        magnitude setpoints by ``1/|Vs|``. The admittance matrix is unchanged.
        """
        vs = self.slack_voltage
        a = abs(vs)
        buses = []
        for b in self.buses:
            if b.kind is BusKind.SLACK:
                buses.append(replace(b, v_mag_target=1.0, v_angle=0.0, v_init=1 + 0j))
            else:
                buses.append(replace(b, p_inj=b.p_inj / a**2, q_inj=b.q_inj / a**2,
                                     v_mag_target=b.v_mag_target / a, v_init=b.v_init / vs))
        return replace(self, buses=tuple(buses)), vs


def _validate(net: Network) -> None:
    if not net.buses:
        raise CaseError("network has no buses")
    n_slack = sum(b.kind is BusKind.SLACK for b in net.buses)
    if n_slack != 1:
        raise CaseError(f"expected exactly one slack bus, found {n_slack}")
    if net.buses[0].kind is not BusKind.SLACK:
        raise CaseError("slack bus must be stored first")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    for b in net.buses:
        if b.kind is not BusKind.PQ and not b.v_mag_target > 0:
            raise CaseError(f"bus {b.id}: voltage magnitude setpoint must be positive")
    pos = {i: k for k, i in enumerate(ids)}
    adj = [[] for _ in ids]
    for br in net.branches:
        if br.from_bus not in pos or br.to_bus not in pos:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if not br.status:
            continue
        if br.series_impedance == 0:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus}: zero series impedance")
        f, t = pos[br.from_bus], pos[br.to_bus]
        adj[f].append(t)
        adj[t].append(f)
    seen = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for j in adj[k]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if len(seen) != len(ids):
        island = sorted(ids[k] for k in range(len(ids)) if k not in seen)
        raise CaseError(f"buses not connected to the slack: {island}")


def make_network(buses, branches, base_mva: float = 100.0, name: str = "") -> Network:
    """Build a network from buses in any order, moving the slack bus first."""
    buses = list(buses)
    slack = [b for b in buses if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
    ordered = slack + [b for b in buses if b.kind is not BusKind.SLACK]
    return Network(tuple(ordered), tuple(branches), base_mva, name)


# ---------------------------------------------------------------------------
# admittance matrix

@dataclass(frozen=True)
class AdmittanceMatrix:
    full: np.ndarray
    row_sums: np.ndarray = field(init=False)
    reduced: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "row_sums", self.full.sum(axis=1))
        object.__setattr__(self, "reduced", self.full[1:, 1:])

    @property
    def g(self) -> np.ndarray:
        return self.full.real

    @property
    def b(self) -> np.ndarray:
        return self.full.imag

    @property
    def slack_column(self) -> np.ndarray:
        return self.full[1:, 0]


def build_ybus(net: Network, check: bool = True) -> AdmittanceMatrix:
    """Assemble Y from branch pi-models and bus shunts (MatPower conventions)."""
    n = net.n_bus
    pos = {b.id: k for k, b in enumerate(net.buses)}
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.status:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / br.series_impedance
        tap = br.tap_ratio
        ytt = ys + 0.5j * br.line_charging
        y[f, f] += ytt / (tap * np.conj(tap))
        yft = -ys / np.conj(tap)
        # without a phase shift both off-diagonal terms are the same number
        ytf = yft if tap.imag == 0 else -ys / tap
        y[f, t] += yft
        y[t, f] += ytf
        y[t, t] += ytt
    y[np.diag_indices(n)] += [b.shunt for b in net.buses]
    adm = AdmittanceMatrix(y)
    if check and n > 1:
        check_reduced(adm)
    return adm


def check_reduced(adm: AdmittanceMatrix, rtol: float = 1e-10) -> float:
    """Return min/max |pivot| of the LU of Y'; raise if below ``rtol``."""
    _, u = scipy.linalg.lu(adm.reduced, permute_l=True)
    piv = np.abs(np.diag(u))
    ratio = piv.min() / piv.max()
    if not ratio > rtol:
        raise AdmittanceError(f"reduced admittance matrix is singular (pivot ratio {ratio:.3e})")
    return ratio


# ---------------------------------------------------------------------------
# PV -> PQ conversion

def convert_pv_to_pq(net: Network, q_values: dict[int, float]) -> Network:
    """Turn every PV bus into a PQ bus with the given net reactive injection."""
    missing = [b.id for b in net.buses if b.kind is BusKind.PV and b.id not in q_values]
    if missing:
        raise CaseError(f"no reactive power given for PV buses {missing}")
    buses = [replace(b, kind=BusKind.PQ, q_inj=float(q_values[b.id]))
             if b.kind is BusKind.PV else b for b in net.buses]
    return replace(net, buses=tuple(buses))


# ---------------------------------------------------------------------------
# MatPower reader

_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _parse_table(name: str, body: str, offset: int, min_cols: int) -> np.ndarray:
    rows = []
    lineno = offset
    for raw in body.split("\n"):
        line = raw.split("%", 1)[0].replace(";", " ").strip()
        if line:
            try:
                row = [float(x) for x in line.replace(",", " ").split()]
            except ValueError:
                raise CaseError(f"line {lineno}: malformed {name} row: {raw.strip()!r}") from None
            if len(row) < min_cols:
                raise CaseError(f"line {lineno}: {name} row has {len(row)} columns, need {min_cols}")
            rows.append(row[:min_cols])
        lineno += 1
    return np.array(rows, dtype=float).reshape(-1, min_cols)


def parse_matpower(text: str, name: str = "") -> Network:
    m = _SCALAR.search(text)
    base = float(m.group(1)) if m else 100.0
    tables = {}
    for m in _TABLE.finditer(text):
        tables[m.group(1)] = (m.group(2), text.count("\n", 0, m.start(2)) + 1)
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseError(f"missing mpc.{key} table")
    bus = _parse_table("bus", *tables["bus"], 13)
    gen = _parse_table("gen", *tables["gen"], 10)
    branch = _parse_table("branch", *tables["branch"], 11)

    sgen: dict[int, complex] = {}
    vg: dict[int, float] = {}
    for row in gen:
        if row[7] <= 0:
            continue
        k = int(row[0])
        sgen[k] = sgen.get(k, 0j) + (row[1] + 1j * row[2]) / base
        vg.setdefault(k, row[5])

    buses = []
    for row in bus:
        bid, btype = int(row[0]), int(row[1])
        if btype == 4:
            raise CaseError(f"bus {bid} is isolated (type 4)")
        # a PV bus without an online generator is solved as PQ, as runpf does
        if btype == 3:
            kind = BusKind.SLACK
        elif btype == 2 and bid in vg:
            kind = BusKind.PV
        elif btype in (1, 2):
            kind = BusKind.PQ
        else:
            raise CaseError(f"bus {bid}: unknown bus type {btype}")
        s = sgen.get(bid, 0j) - (row[2] + 1j * row[3]) / base
        vm = vg.get(bid, row[7]) if kind is not BusKind.PQ else row[7]
        buses.append(Bus(
            id=bid, kind=kind, p_inj=float(s.real), q_inj=float(s.imag),
            v_mag_target=float(vm) if kind is not BusKind.PQ else 1.0,
            shunt=complex(row[4], row[5]) / base,
            v_angle=float(np.deg2rad(row[8])) if kind is BusKind.SLACK else 0.0,
            v_init=complex(vm * np.exp(1j * np.deg2rad(row[8]))),
        ))
    branches = []
    for row in branch:
        ratio = row[8] if row[8] != 0 else 1.0
        branches.append(Branch(
            from_bus=int(row[0]), to_bus=int(row[1]),
            series_impedance=complex(row[2], row[3]),
            line_charging=float(row[4]),
            tap_ratio=complex(ratio * np.exp(1j * np.deg2rad(row[9]))),
            status=bool(row[10] > 0),
        ))
    return make_network(buses, branches, base, name)


# ---------------------------------------------------------------------------
# JSON format

JSON_SCHEMA = 1


def _c(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def to_json(net: Network) -> str:
    doc = {
        "schema": JSON_SCHEMA,
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [
            {"id": b.id, "kind": b.kind.value, "p": b.p_inj, "q": b.q_inj,
             "v_mag": b.v_mag_target, "v_angle": b.v_angle,
             "shunt": _c(b.shunt), "v_init": _c(b.v_init)}
            for b in net.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "z": _c(br.series_impedance),
             "charging": br.line_charging, "tap": _c(br.tap_ratio), "status": br.status}
            for br in net.branches
        ],
    }
    return json.dumps(doc, indent=1)


def parse_json(text: str) -> Network:
    try:
        doc = json.loads(text)
        if doc.get("schema") != JSON_SCHEMA:
            raise CaseError(f"unsupported network schema {doc.get('schema')!r}")
        buses = [Bus(id=int(b["id"]), kind=BusKind(b["kind"]), p_inj=b["p"], q_inj=b["q"],
                     v_mag_target=b["v_mag"], v_angle=b.get("v_angle", 0.0),
                     shunt=complex(*b["shunt"]), v_init=complex(*b.get("v_init", (1.0, 0.0))))
                 for b in doc["buses"]]
        branches = [Branch(int(r["from"]), int(r["to"]), complex(*r["z"]), r["charging"],
                           complex(*r["tap"]), bool(r["status"]))
                    for r in doc["branches"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CaseError(f"malformed network JSON: {exc}") from exc
    return make_network(buses, branches, doc.get("base_mva", 100.0), doc.get("name", ""))


def parse_case(text: str, name: str = "") -> Network:
    """Parse MatPower ``.m`` text or the native JSON format."""
    if text.lstrip().startswith("{"):
        return parse_json(text)
    return parse_matpower(text, name)


BUILTIN_CASES = ("case9", "case14", "case30", "case39", "case57", "case118", "case300")


def load_case(ref: str | Path) -> Network:
    """Load a case by path, or by name for the bundled IEEE cases."""
    p = Path(ref)
    if p.exists():
        return parse_case(p.read_text(), p.stem)
    name = str(ref)
    if name in BUILTIN_CASES:
        text = resources.files("helmflow.data").joinpath(f"{name}.m").read_text()
        return parse_matpower(text, name)
    raise CaseError(f"case not found: {ref}")
