"""Network case model: buses, lines, converter-interfaced sources and loads.

A :class:`NetworkCase` is an immutable description of a DC network.  Source
buses hold a voltage regulator behind a series resistance and a filter
capacitor; load buses hold a shunt resistance, a filter capacitor and a
constant-power draw that is only known to lie in an interval.  Cases are
serialized to a flat JSON document and validated structurally on load.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .topologies import TOPOLOGIES

# Uniform component values used by every builtin case (per line / per bus).
BUILTIN_SOURCE_R = 0.05
BUILTIN_SOURCE_C = 0.75e-3
BUILTIN_LINE_R = 0.05
BUILTIN_LINE_L = 3.0e-3
BUILTIN_LOAD_R = 5.0
BUILTIN_LOAD_C = 0.9e-3
BUILTIN_P_NOM = 25.0e3
BUILTIN_P_MAX = 50.0e3
BUILTIN_V_MIN = 425.0
BUILTIN_V_MAX = 575.0

COST_KINDS = ("nominal_losses", "quadratic")


class CaseFormatError(ValueError):
    """Raised when a case document cannot be parsed into the schema."""


class CaseValidationError(ValueError):
    """Raised when a parsed case violates a structural invariant."""


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str  # "source" or "load"


@dataclass(frozen=True)
class Line:
    """Series RL branch between two buses."""

    id: str
    from_bus: str
    to_bus: str
    r_ohm: float
    l_henry: float


@dataclass(frozen=True)
class Source:
    """Voltage-regulating converter: reference behind R_s, filter C_s."""

    bus: str
    r_ohm: float
    c_farad: float
    vref_min: float
    vref_max: float


@dataclass(frozen=True)
class Load:
    """Load bus: shunt resistance, filter capacitor, interval power draw."""

    bus: str
    r_ohm: float
    c_farad: float
    p_nom_w: float
    p_min_w: float
    p_max_w: float
    v_min: float
    v_max: float


@dataclass(frozen=True)
class CostSpec:
    """Objective selector for the set-point optimizations.

    ``nominal_losses`` minimizes total dissipated power at the nominal
    operating point.  ``quadratic`` minimizes a diagonal quadratic in the
    reference voltages, ``sum(q[k] * vref[k]**2 + lin[k] * vref[k]) + const``.
    """

    kind: str = "nominal_losses"
    q_diag: tuple[float, ...] = ()
    linear: tuple[float, ...] = ()
    constant: float = 0.0


@dataclass(frozen=True)
class NetworkCase:
    """Immutable network description; element order fixes vector order."""

    name: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    sources: tuple[Source, ...]
    loads: tuple[Load, ...]
    cost: CostSpec = field(default_factory=CostSpec)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_loads(self) -> int:
        return len(self.loads)

    @property
    def n_states(self) -> int:
        return self.n_lines + self.n_sources + self.n_loads

    def source_buses(self) -> list[str]:
        return [s.bus for s in self.sources]

    def load_buses(self) -> list[str]:
        return [l.bus for l in self.loads]

    def p_nom(self) -> np.ndarray:
        return np.array([l.p_nom_w for l in self.loads])

    def p_min(self) -> np.ndarray:
        return np.array([l.p_min_w for l in self.loads])

    def p_max(self) -> np.ndarray:
        return np.array([l.p_max_w for l in self.loads])

    def v_min(self) -> np.ndarray:
        return np.array([l.v_min for l in self.loads])

    def v_max(self) -> np.ndarray:
        return np.array([l.v_max for l in self.loads])

    def vref_min(self) -> np.ndarray:
        return np.array([s.vref_min for s in self.sources])

    def vref_max(self) -> np.ndarray:
        return np.array([s.vref_max for s in self.sources])


def _require_keys(obj: dict, required: tuple[str, ...], optional: tuple[str, ...],
                  where: str) -> None:
    missing = [k for k in required if k not in obj]
    if missing:
        raise CaseFormatError(f"{where}: missing keys {missing}")
    unknown = [k for k in obj if k not in required and k not in optional]
    if unknown:
        raise CaseFormatError(f"{where}: unknown keys {unknown}")


def _num(obj: dict, key: str, where: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseFormatError(f"{where}: field {key!r} must be a number")
    return float(v)


def case_from_dict(doc: dict, name: str = "case") -> NetworkCase:
    """Parse a case document; raises CaseFormatError / CaseValidationError."""
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be a JSON object")
    _require_keys(doc, ("buses", "lines", "sources", "loads"), ("cost", "name"),
                  "case")
    name = doc.get("name", name)

    buses = []
    for i, b in enumerate(doc["buses"]):
        _require_keys(b, ("id", "kind"), (), f"buses[{i}]")
        if not isinstance(b["id"], str):
            raise CaseFormatError(f"buses[{i}]: id must be a string")
        buses.append(Bus(id=b["id"], kind=b["kind"]))

    lines = []
    for i, ln in enumerate(doc["lines"]):
        where = f"lines[{i}]"
        _require_keys(ln, ("id", "from", "to", "r_ohm", "l_henry"), (), where)
        lines.append(Line(id=str(ln["id"]), from_bus=str(ln["from"]),
                          to_bus=str(ln["to"]), r_ohm=_num(ln, "r_ohm", where),
                          l_henry=_num(ln, "l_henry", where)))

    sources = []
    for i, s in enumerate(doc["sources"]):
        where = f"sources[{i}]"
        _require_keys(s, ("bus", "r_ohm", "c_farad", "vref_min", "vref_max"),
                      (), where)
        sources.append(Source(bus=str(s["bus"]), r_ohm=_num(s, "r_ohm", where),
                              c_farad=_num(s, "c_farad", where),
                              vref_min=_num(s, "vref_min", where),
                              vref_max=_num(s, "vref_max", where)))

    loads = []
    for i, l in enumerate(doc["loads"]):
        where = f"loads[{i}]"
        _require_keys(l, ("bus", "r_ohm", "c_farad", "p_nom_w", "p_min_w",
                          "p_max_w", "v_min", "v_max"), (), where)
        loads.append(Load(bus=str(l["bus"]), r_ohm=_num(l, "r_ohm", where),
                          c_farad=_num(l, "c_farad", where),
                          p_nom_w=_num(l, "p_nom_w", where),
                          p_min_w=_num(l, "p_min_w", where),
                          p_max_w=_num(l, "p_max_w", where),
                          v_min=_num(l, "v_min", where),
                          v_max=_num(l, "v_max", where)))

    cost = CostSpec()
    if "cost" in doc:
        c = doc["cost"]
        _require_keys(c, ("kind",), ("q_diag", "linear", "constant"), "cost")
        cost = CostSpec(kind=c["kind"],
                        q_diag=tuple(c.get("q_diag", ())),
                        linear=tuple(c.get("linear", ())),
                        constant=float(c.get("constant", 0.0)))

    case = NetworkCase(name=name, buses=tuple(buses), lines=tuple(lines),
                       sources=tuple(sources), loads=tuple(loads), cost=cost)
    validate_case(case)
    return case


def case_to_dict(case: NetworkCase) -> dict:
    """Inverse of :func:`case_from_dict`; floats round-trip exactly."""
    doc = {
        "name": case.name,
        "buses": [{"id": b.id, "kind": b.kind} for b in case.buses],
        "lines": [{"id": l.id, "from": l.from_bus, "to": l.to_bus,
                   "r_ohm": l.r_ohm, "l_henry": l.l_henry}
                  for l in case.lines],
        "sources": [dataclasses.asdict(s) for s in case.sources],
        "loads": [dataclasses.asdict(l) for l in case.loads],
        "cost": {"kind": case.cost.kind},
    }
    if case.cost.kind == "quadratic":
        doc["cost"].update(q_diag=list(case.cost.q_diag),
                           linear=list(case.cost.linear),
                           constant=case.cost.constant)
    return doc


def load_case(path: str) -> NetworkCase:
    """Read and validate a case from a JSON file.

    Raises:
        CaseFormatError: the document does not match the schema.
        CaseValidationError: the document violates a structural invariant.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseFormatError(f"{path}: invalid JSON ({exc})") from exc
    return case_from_dict(doc, name=path)


def save_case(case: NetworkCase, path: str) -> None:
    """Write a validated case to a JSON file."""
    validate_case(case)
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=2)
        fh.write("\n")


def validate_case(case: NetworkCase) -> None:
    """Check all structural invariants; raises CaseValidationError."""
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids")
    kinds = {b.id: b.kind for b in case.buses}
    for b in case.buses:
        if b.kind not in ("source", "load"):
            raise CaseValidationError(f"bus {b.id}: unknown kind {b.kind!r}")

    line_ids = [l.id for l in case.lines]
    if len(set(line_ids)) != len(line_ids):
        raise CaseValidationError("duplicate line ids")
    for l in case.lines:
        if l.from_bus not in kinds or l.to_bus not in kinds:
            raise CaseValidationError(f"line {l.id}: unknown endpoint")
        if l.from_bus == l.to_bus:
            raise CaseValidationError(f"line {l.id}: self loop")
        if not (l.r_ohm > 0 and l.l_henry > 0):
            raise CaseValidationError(f"line {l.id}: r_ohm and l_henry must be > 0")

    src_buses = [s.bus for s in case.sources]
    if len(set(src_buses)) != len(src_buses):
        raise CaseValidationError("multiple sources on one bus")
    for s in case.sources:
        if kinds.get(s.bus) != "source":
            raise CaseValidationError(f"source at {s.bus}: bus is not a source bus")
        if not (s.r_ohm > 0 and s.c_farad > 0):
            raise CaseValidationError(f"source at {s.bus}: r_ohm and c_farad must be > 0")
        if not (0 < s.vref_min <= s.vref_max):
            raise CaseValidationError(f"source at {s.bus}: bad vref interval")

    load_buses = [l.bus for l in case.loads]
    if len(set(load_buses)) != len(load_buses):
        raise CaseValidationError("multiple loads on one bus")
    for l in case.loads:
        if kinds.get(l.bus) != "load":
            raise CaseValidationError(f"load at {l.bus}: bus is not a load bus")
        if not (l.r_ohm > 0 and l.c_farad > 0):
            raise CaseValidationError(f"load at {l.bus}: r_ohm and c_farad must be > 0")
        if not (0 <= l.p_min_w <= l.p_nom_w <= l.p_max_w):
            raise CaseValidationError(f"load at {l.bus}: power interval must satisfy "
                                      "0 <= p_min <= p_nom <= p_max")
        if not (0 < l.v_min <= l.v_max):
            raise CaseValidationError(f"load at {l.bus}: bad voltage interval")

    if set(src_buses) != {b.id for b in case.buses if b.kind == "source"}:
        raise CaseValidationError("every source bus needs exactly one source")
    if set(load_buses) != {b.id for b in case.buses if b.kind == "load"}:
        raise CaseValidationError("every load bus needs exactly one load")

    if case.cost.kind not in COST_KINDS:
        raise CaseValidationError(f"unknown cost kind {case.cost.kind!r}")
    if case.cost.kind == "quadratic":
        if len(case.cost.q_diag) != case.n_sources:
            raise CaseValidationError("quadratic cost needs one q_diag entry per source")
        if any(q < 0 for q in case.cost.q_diag):
            raise CaseValidationError("quadratic cost must be positive semidefinite")
        if case.cost.linear and len(case.cost.linear) != case.n_sources:
            raise CaseValidationError("quadratic cost linear term has wrong length")

    # Connectivity over the line graph.
    adj: dict[str, list[str]] = {b.id: [] for b in case.buses}
    for l in case.lines:
        adj[l.from_bus].append(l.to_bus)
        adj[l.to_bus].append(l.from_bus)
    seen = {case.buses[0].id}
    stack = [case.buses[0].id]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(case.buses):
        raise CaseValidationError("network is not connected")

    if not case.sources:
        raise CaseValidationError("network needs at least one source")
    if not case.loads:
        raise CaseValidationError("network needs at least one load")


def builtin_case(name: str) -> NetworkCase:
    """Build one of the bundled transmission-grid cases.

    Supported names: ieee9, ieee14, ieee30, ieee39, ieee69, ieee118.
    Generator buses of the original system become sources, all other buses
    become loads, and every component takes the uniform builtin values
    (50 mOhm / 3 mH lines, 50 mOhm / 0.75 mF sources, 5 Ohm / 0.9 mF loads
    drawing 0 to 50 kW around a 25 kW nominal, 425 to 575 V bounds).
    """
    if name not in TOPOLOGIES:
        raise KeyError(f"unknown builtin case {name!r}; "
                       f"choose from {sorted(TOPOLOGIES)}")
    n_bus, src_buses, edges = TOPOLOGIES[name]
    src_set = set(src_buses)
    buses = tuple(Bus(id=str(i), kind="source" if i in src_set else "load")
                  for i in range(1, n_bus + 1))
    lines = tuple(Line(id=f"line{k + 1}", from_bus=str(a), to_bus=str(b),
                       r_ohm=BUILTIN_LINE_R, l_henry=BUILTIN_LINE_L)
                  for k, (a, b) in enumerate(edges))
    sources = tuple(Source(bus=str(i), r_ohm=BUILTIN_SOURCE_R,
                           c_farad=BUILTIN_SOURCE_C,
                           vref_min=BUILTIN_V_MIN, vref_max=BUILTIN_V_MAX)
                    for i in src_buses)
    loads = tuple(Load(bus=str(i), r_ohm=BUILTIN_LOAD_R, c_farad=BUILTIN_LOAD_C,
                       p_nom_w=BUILTIN_P_NOM, p_min_w=0.0, p_max_w=BUILTIN_P_MAX,
                       v_min=BUILTIN_V_MIN, v_max=BUILTIN_V_MAX)
                  for i in range(1, n_bus + 1) if i not in src_set)
    case = NetworkCase(name=name, buses=buses, lines=lines, sources=sources,
                       loads=loads)
    validate_case(case)
    return case
