"""Network data model: nodes, pipes, valves, DMA partition and meter layout.

Networks are treated as immutable values. Operations that change topology
(``insert_midpoint_leak``) return a new :class:`Network` and never touch the
one they were given, so a single instance can be shared across workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1


class NetworkError(ValueError):
    """Base class for problems with network data."""


class ParseError(NetworkError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(NetworkError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__(
            f"{len(self.violations)} violation(s):\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class NodeKind(str, Enum):
    JUNCTION = "junction"
    RESERVOIR = "reservoir"


class LinkStatus(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    ACTIVE = "active"  # valves only


class LeakModel(str, Enum):
    POWER = "POWER"
    FAVAD = "FAVAD"


class HeadlossModel(str, Enum):
    HAZEN_WILLIAMS = "HW"
    DARCY_WEISBACH = "DW"


@dataclass(frozen=True)
class LeakParams:
    """Diffuse (background) leakage parameters of one pipe, per unit length."""

    model: LeakModel = LeakModel.POWER
    beta: float = 0.0
    alpha: float = 1.0
    m_coeff: float = 0.0


@dataclass(frozen=True)
class Node:
    id: str
    elevation: float
    demand: float = 0.0
    kind: NodeKind = NodeKind.JUNCTION
    head: float | None = None  # fixed head, reservoirs only
    dma: str | None = None
    orifice: float = 0.0  # punctual-leak orifice diameter (m), leak nodes only

    @property
    def is_reservoir(self) -> bool:
        return self.kind is NodeKind.RESERVOIR


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    roughness: float
    status: LinkStatus = LinkStatus.OPEN
    dma: str | None = None
    leak: LeakParams = LeakParams()
    origin: str | None = None  # original pipe id when this is half of a split pipe

    @property
    def is_open(self) -> bool:
        return self.status is not LinkStatus.CLOSED

    @property
    def original_id(self) -> str:
        return self.origin if self.origin is not None else self.id


@dataclass(frozen=True)
class Valve:
    """Pressure-reducing valve; ``setting`` is the downstream pressure target (m)."""

    id: str
    from_node: str
    to_node: str
    setting: float
    status: LinkStatus = LinkStatus.ACTIVE
    diameter: float = 0.2
    minor_loss: float = 0.5


@dataclass(frozen=True)
class MeterConfig:
    pressure_nodes: tuple[str, ...] = ()
    tags: tuple[str, ...] = ()
    flow_pipes: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.tags:
            object.__setattr__(self, "tags", ("boundary",) * len(self.pressure_nodes))

    def __len__(self) -> int:
        return len(self.pressure_nodes)

    def fingerprint(self) -> str:
        payload = json.dumps(list(self.pressure_nodes)).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class DemandModel:
    """Pressure thresholds of the pressure-driven demand law."""

    p_min: float = 0.0
    p_service: float = 20.0


@dataclass(frozen=True)
class OperativeCycle:
    dt: float = 3600.0
    multipliers: tuple[float, ...] = (1.0,)

    @property
    def n(self) -> int:
        return len(self.multipliers)


@dataclass(frozen=True)
class LeakSite:
    """Bookkeeping for a punctual leak inserted at a pipe midpoint."""

    pipe: Pipe  # the original, unsplit pipe
    node: str
    halves: tuple[str, str]


@dataclass(frozen=True)
class DmaInfo:
    id: str
    nodes: frozenset[str]
    pipes: tuple[str, ...]
    length: float

    @property
    def n_pipes(self) -> int:
        return len(self.pipes)


@dataclass
class Network:
    nodes: dict[str, Node]
    pipes: dict[str, Pipe]
    valves: dict[str, Valve] = field(default_factory=dict)
    dmas: tuple[str, ...] = ()
    meters: MeterConfig = MeterConfig()
    cycle: OperativeCycle = OperativeCycle()
    demand_model: DemandModel = DemandModel()
    headloss: HeadlossModel = HeadlossModel.HAZEN_WILLIAMS
    leak_defaults: LeakParams = LeakParams()
    name: str = ""
    leaks: dict[str, LeakSite] = field(default_factory=dict)

    @property
    def junctions(self) -> list[str]:
        return [n.id for n in self.nodes.values() if not n.is_reservoir]

    @property
    def reservoirs(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.is_reservoir]

    @property
    def n_p(self) -> int:
        return len(self.pipes)

    @property
    def n_n(self) -> int:
        return len(self.junctions)

    @property
    def n_0(self) -> int:
        return len(self.reservoirs)

    def pipe_dma(self, pipe_id: str) -> str | None:
        return self.pipes[pipe_id].dma

    def total_length(self) -> float:
        return float(sum(p.length for p in self.pipes.values() if p.dma is not None))

    def original_pipes(self) -> list[str]:
        """Pipe ids as in the unsplit network, in file order."""
        out: list[str] = []
        seen = set()
        for p in self.pipes.values():
            oid = p.original_id
            if oid not in seen:
                seen.add(oid)
                out.append(oid)
        return out

    def original_length(self, pipe_id: str) -> float:
        if pipe_id in self.leaks:
            return self.leaks[pipe_id].pipe.length
        return self.pipes[pipe_id].length

    def with_meters(self, meters: MeterConfig) -> "Network":
        return dataclasses.replace(self, meters=meters)

    def to_dict(self) -> dict:
        return network_to_dict(self)

    def fingerprint(self) -> str:
        return fingerprint(self)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _leak_to_dict(lp: LeakParams) -> dict:
    return {"model": lp.model.value, "beta": lp.beta, "alpha": lp.alpha, "m_coeff": lp.m_coeff}


def network_to_dict(net: Network) -> dict:
    nodes = []
    reservoirs = []
    for n in net.nodes.values():
        if n.is_reservoir:
            reservoirs.append({"id": n.id, "head": n.head, "elevation": n.elevation})
        else:
            d: dict[str, Any] = {"id": n.id, "elevation": n.elevation, "demand": n.demand, "dma": n.dma}
            if n.orifice:
                d["orifice"] = n.orifice
            nodes.append(d)
    pipes = []
    for p in net.pipes.values():
        d = {
            "id": p.id,
            "from": p.from_node,
            "to": p.to_node,
            "length": p.length,
            "diameter": p.diameter,
            "roughness": p.roughness,
            "status": p.status.value,
            "dma": p.dma,
        }
        if p.leak != net.leak_defaults:
            d["leak"] = _leak_to_dict(p.leak)
        if p.origin is not None:
            d["origin"] = p.origin
        pipes.append(d)
    valves = [
        {
            "id": v.id,
            "from": v.from_node,
            "to": v.to_node,
            "setting": v.setting,
            "status": v.status.value,
            "diameter": v.diameter,
            "minor_loss": v.minor_loss,
        }
        for v in net.valves.values()
    ]
    return {
        "format": FORMAT_VERSION,
        "name": net.name,
        "headloss_model": net.headloss.value,
        "demand_model": {"p_min": net.demand_model.p_min, "p_service": net.demand_model.p_service},
        "leak_model_defaults": _leak_to_dict(net.leak_defaults),
        "demand_cycle": {"dt": net.cycle.dt, "multipliers": list(net.cycle.multipliers)},
        "dmas": list(net.dmas),
        "nodes": nodes,
        "reservoirs": reservoirs,
        "pipes": pipes,
        "valves": valves,
        "meters": {
            "name": net.meters.name,
            "pressure": [{"node": n, "tag": t} for n, t in zip(net.meters.pressure_nodes, net.meters.tags)],
            "flow": list(net.meters.flow_pipes),
        },
    }


def fingerprint(net: Network) -> str:
    d = network_to_dict(net)
    d.pop("meters")
    payload = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def _req(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ParseError(f"expected an object in {where}", field=where)
    if key not in obj:
        raise ParseError(f"missing required field in {where}", field=key)
    return obj[key]


def _num(obj: dict, key: str, where: str, default: Any = None) -> float:
    val = obj.get(key, default) if default is not None else _req(obj, key, where)
    try:
        return float(val)
    except (TypeError, ValueError):
        raise ParseError(f"not a number in {where}: {val!r}", field=key) from None


def _enum(cls, value, key: str, where: str):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ParseError(f"invalid value {value!r} in {where} (allowed: {allowed})", field=key) from None


def _leak_from_dict(d: dict | None, default: LeakParams, where: str) -> LeakParams:
    if d is None:
        return default
    return LeakParams(
        model=_enum(LeakModel, d.get("model", default.model.value), "model", where),
        beta=_num(d, "beta", where, default.beta),
        alpha=_num(d, "alpha", where, default.alpha),
        m_coeff=_num(d, "m_coeff", where, default.m_coeff),
    )


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    fmt = data.get("format")
    if fmt != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {fmt!r} (expected {FORMAT_VERSION})", field="format")

    defaults = _leak_from_dict(data.get("leak_model_defaults"), LeakParams(), "leak_model_defaults")
    dm = data.get("demand_model", {})
    demand_model = DemandModel(_num(dm, "p_min", "demand_model", 0.0), _num(dm, "p_service", "demand_model", 20.0))
    dc = data.get("demand_cycle", {})
    mults = dc.get("multipliers", [1.0])
    if not isinstance(mults, list):
        raise ParseError("multipliers must be a list", field="demand_cycle.multipliers")
    cycle = OperativeCycle(_num(dc, "dt", "demand_cycle", 3600.0), tuple(float(m) for m in mults))
    headloss = _enum(HeadlossModel, data.get("headloss_model", "HW"), "headloss_model", "top level")

    nodes: dict[str, Node] = {}
    duplicates: list[str] = []
    for i, r in enumerate(data.get("reservoirs", [])):
        where = f"reservoirs[{i}]"
        rid = str(_req(r, "id", where))
        head = _num(r, "head", where)
        if "demand" in r and float(r["demand"]) != 0.0:
            duplicates.append(f"reservoir '{rid}' must not carry a demand")
        node = Node(rid, _num(r, "elevation", where, head), 0.0, NodeKind.RESERVOIR, head, None)
        if rid in nodes:
            duplicates.append(f"duplicate node id '{rid}'")
        nodes[rid] = node
    for i, n in enumerate(data.get("nodes", [])):
        where = f"nodes[{i}]"
        nid = str(_req(n, "id", where))
        dma = n.get("dma")
        node = Node(
            nid,
            _num(n, "elevation", where),
            _num(n, "demand", where, 0.0),
            NodeKind.JUNCTION,
            None,
            None if dma is None else str(dma),
            _num(n, "orifice", where, 0.0),
        )
        if nid in nodes:
            duplicates.append(f"duplicate node id '{nid}'")
        nodes[nid] = node

    pipes: dict[str, Pipe] = {}
    for i, p in enumerate(data.get("pipes", [])):
        where = f"pipes[{i}]"
        pid = str(_req(p, "id", where))
        dma = p.get("dma")
        pipe = Pipe(
            pid,
            str(_req(p, "from", where)),
            str(_req(p, "to", where)),
            _num(p, "length", where),
            _num(p, "diameter", where),
            _num(p, "roughness", where),
            _enum(LinkStatus, p.get("status", "open"), "status", where),
            None if dma is None else str(dma),
            _leak_from_dict(p.get("leak"), defaults, where + ".leak"),
            p.get("origin"),
        )
        if pid in pipes:
            duplicates.append(f"duplicate pipe id '{pid}'")
        pipes[pid] = pipe

    valves: dict[str, Valve] = {}
    for i, v in enumerate(data.get("valves", [])):
        where = f"valves[{i}]"
        vid = str(_req(v, "id", where))
        valve = Valve(
            vid,
            str(_req(v, "from", where)),
            str(_req(v, "to", where)),
            _num(v, "setting", where),
            _enum(LinkStatus, v.get("status", "active"), "status", where),
            _num(v, "diameter", where, 0.2),
            _num(v, "minor_loss", where, 0.5),
        )
        if vid in valves or vid in pipes:
            duplicates.append(f"duplicate link id '{vid}'")
        valves[vid] = valve

    dmas = []
    for i, d in enumerate(data.get("dmas", [])):
        dmas.append(str(d["id"]) if isinstance(d, dict) else str(d))

    m = data.get("meters", {}) or {}
    pnodes, tags = [], []
    for i, e in enumerate(m.get("pressure", [])):
        if isinstance(e, dict):
            pnodes.append(str(_req(e, "node", f"meters.pressure[{i}]")))
            tags.append(str(e.get("tag", "boundary")))
        else:
            pnodes.append(str(e))
            tags.append("boundary")
    meters = MeterConfig(tuple(pnodes), tuple(tags), tuple(str(x) for x in m.get("flow", [])), str(m.get("name", "")))

    net = Network(
        nodes=nodes,
        pipes=pipes,
        valves=valves,
        dmas=tuple(dmas),
        meters=meters,
        cycle=cycle,
        demand_model=demand_model,
        headloss=headloss,
        leak_defaults=defaults,
        name=str(data.get("name", "")),
    )
    net = _infer_pipe_dmas(net)
    violations = duplicates + validate(net)
    if violations:
        raise ValidationError(violations)
    return net


def _infer_pipe_dmas(net: Network) -> Network:
    """Open pipes without an explicit DMA take the DMA their junction ends agree on."""
    changed = {}
    for p in net.pipes.values():
        if p.dma is not None or not p.is_open:
            continue
        ends = {net.nodes[n].dma for n in (p.from_node, p.to_node) if n in net.nodes and not net.nodes[n].is_reservoir}
        if len(ends) == 1:
            (d,) = ends
            if d is not None:
                changed[p.id] = dataclasses.replace(p, dma=d)
    if not changed:
        return net
    return dataclasses.replace(net, pipes={k: changed.get(k, v) for k, v in net.pipes.items()})


def load_network(path: str | Path) -> Network:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return network_from_dict(data)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(net: Network) -> list[str]:
    """Return every invariant violation found in ``net`` (empty when valid)."""
    v: list[str] = []
    dmas = set(net.dmas)
    if len(dmas) != len(net.dmas):
        v.append("duplicate DMA ids")
    if not net.reservoirs:
        v.append("network has no reservoir")
    for n in net.nodes.values():
        if not math.isfinite(n.elevation):
            v.append(f"node '{n.id}': elevation not finite")
        if n.is_reservoir:
            if n.head is None or not math.isfinite(n.head):
                v.append(f"reservoir '{n.id}': head not finite")
            if n.demand != 0.0:
                v.append(f"reservoir '{n.id}' must not carry a demand")
            continue
        if n.demand < 0 or not math.isfinite(n.demand):
            v.append(f"junction '{n.id}': demand must be >= 0")
        if n.orifice < 0:
            v.append(f"junction '{n.id}': orifice diameter must be >= 0")
        if n.dma is None:
            v.append(f"junction '{n.id}' has no dma_id")
        elif n.dma not in dmas:
            v.append(f"junction '{n.id}': unknown dma '{n.dma}'")

    for p in net.pipes.values():
        for end in (p.from_node, p.to_node):
            if end not in net.nodes:
                v.append(f"pipe '{p.id}': unknown node '{end}'")
        if p.from_node == p.to_node:
            v.append(f"pipe '{p.id}': from and to nodes coincide")
        if not p.length > 0:
            v.append(f"pipe '{p.id}': length must be > 0")
        if not p.diameter > 0:
            v.append(f"pipe '{p.id}': diameter must be > 0")
        if not p.roughness > 0:
            v.append(f"pipe '{p.id}': roughness must be > 0")
        if p.status is LinkStatus.ACTIVE:
            v.append(f"pipe '{p.id}': status 'active' is only valid for valves")
        if p.dma is None and p.is_open:
            v.append(f"pipe '{p.id}': open pipe without dma_id (ends in different DMAs)")
        elif p.dma is not None and p.dma not in dmas:
            v.append(f"pipe '{p.id}': unknown dma '{p.dma}'")
        lp = p.leak
        if lp.beta < 0:
            v.append(f"pipe '{p.id}': leak beta must be >= 0")
        if not 0.5 <= lp.alpha <= 2.5:
            v.append(f"pipe '{p.id}': leak alpha must lie in [0.5, 2.5]")
        if lp.m_coeff < 0:
            v.append(f"pipe '{p.id}': leak m_coeff must be >= 0")

    for val in net.valves.values():
        for end in (val.from_node, val.to_node):
            if end not in net.nodes:
                v.append(f"valve '{val.id}': unknown node '{end}'")
            elif net.nodes[end].is_reservoir and end == val.to_node and val.status is LinkStatus.ACTIVE:
                v.append(f"valve '{val.id}': downstream node is a reservoir")
        if val.setting < 0:
            v.append(f"valve '{val.id}': setting must be >= 0")

    seen = set()
    for nid in net.meters.pressure_nodes:
        if nid in seen:
            v.append(f"pressure meter '{nid}' listed twice")
        seen.add(nid)
        if nid not in net.nodes:
            v.append(f"pressure meter at unknown node '{nid}'")
        elif net.nodes[nid].is_reservoir:
            v.append(f"pressure meter at reservoir '{nid}'")
    if len(net.meters.tags) != len(net.meters.pressure_nodes):
        v.append("meter tags do not match pressure meter count")
    for pid in net.meters.flow_pipes:
        if pid not in net.pipes and pid not in net.valves:
            v.append(f"flow meter on unknown link '{pid}'")

    if not 0 <= net.demand_model.p_min < net.demand_model.p_service:
        v.append("demand model requires 0 <= p_min < p_service")
    if net.cycle.n < 1 or any(not m > 0 for m in net.cycle.multipliers):
        v.append("demand cycle needs at least one multiplier, all > 0")
    if not net.cycle.dt > 0:
        v.append("demand cycle dt must be > 0")

    if not any("unknown node" in x for x in v):
        for nid in unreachable_junctions(net):
            v.append(f"junction '{nid}' is not connected to any reservoir through open links")
    return v


def _open_adjacency(net: Network) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {n: [] for n in net.nodes}
    links: Iterable = list(net.pipes.values()) + list(net.valves.values())
    for link in links:
        if link.status is LinkStatus.CLOSED:
            continue
        adj[link.from_node].append(link.to_node)
        adj[link.to_node].append(link.from_node)
    return adj


def unreachable_junctions(net: Network) -> list[str]:
    adj = _open_adjacency(net)
    seen = set(net.reservoirs)
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return [n for n in net.junctions if n not in seen]


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def incidence(net: Network, open_only: bool = True) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Pipe-node incidence split into unknown-head and known-head columns.

    Each row has +1 at the pipe's ``to_node`` and -1 at its ``from_node``;
    columns follow ``net.junctions`` and ``net.reservoirs`` order.
    """
    jidx = {n: i for i, n in enumerate(net.junctions)}
    ridx = {n: i for i, n in enumerate(net.reservoirs)}
    pipes = [p for p in net.pipes.values() if p.is_open or not open_only]
    rows_n, cols_n, vals_n = [], [], []
    rows_0, cols_0, vals_0 = [], [], []
    for k, p in enumerate(pipes):
        for node, sign in ((p.to_node, 1.0), (p.from_node, -1.0)):
            if node in jidx:
                rows_n.append(k), cols_n.append(jidx[node]), vals_n.append(sign)
            else:
                rows_0.append(k), cols_0.append(ridx[node]), vals_0.append(sign)
    a_pn = sp.csr_matrix((vals_n, (rows_n, cols_n)), shape=(len(pipes), len(jidx)))
    a_p0 = sp.csr_matrix((vals_0, (rows_0, cols_0)), shape=(len(pipes), len(ridx)))
    return a_pn, a_p0


def dma_subnetwork(net: Network, dma_id: str) -> DmaInfo:
    if dma_id not in net.dmas:
        raise KeyError(f"unknown dma '{dma_id}'")
    pipes = tuple(p.id for p in net.pipes.values() if p.dma == dma_id and p.is_open)
    nodes = {n.id for n in net.nodes.values() if n.dma == dma_id}
    for pid in pipes:
        p = net.pipes[pid]
        nodes.update((p.from_node, p.to_node))
    length = float(sum(net.pipes[pid].length for pid in pipes))
    return DmaInfo(dma_id, frozenset(nodes), pipes, length)


def _unique(base: str, taken) -> str:
    name, i = base, 1
    while name in taken:
        i += 1
        name = f"{base}{i}"
    return name


def insert_midpoint_leak(net: Network, pipe_id: str, orifice_diameter: float) -> Network:
    """Split ``pipe_id`` at its midpoint and attach an orifice at the new node.

    Both halves keep the diameter, roughness and per-unit-length leak
    parameters of the original, so total diffuse leakage capacity is
    unchanged. ``origin`` on each half points back to ``pipe_id``.
    """
    if pipe_id not in net.pipes:
        raise KeyError(f"unknown pipe '{pipe_id}'")
    pipe = net.pipes[pipe_id]
    if not pipe.is_open:
        raise NetworkError(f"pipe '{pipe_id}' is closed")
    if pipe.origin is not None:
        raise NetworkError(f"pipe '{pipe_id}' already carries a leak node")
    if not orifice_diameter >= 0:
        raise NetworkError("orifice diameter must be >= 0")

    a, b = net.nodes[pipe.from_node], net.nodes[pipe.to_node]
    dma = pipe.dma
    node_id = _unique(f"{pipe_id}~leak", net.nodes)
    leak_node = Node(node_id, 0.5 * (a.elevation + b.elevation), 0.0, NodeKind.JUNCTION, None, dma, float(orifice_diameter))
    half_a = _unique(f"{pipe_id}~a", net.pipes)
    half_b = _unique(f"{pipe_id}~b", net.pipes)
    half = 0.5 * pipe.length
    p1 = dataclasses.replace(pipe, id=half_a, to_node=node_id, length=half, origin=pipe_id)
    p2 = dataclasses.replace(pipe, id=half_b, from_node=node_id, length=half, origin=pipe_id)

    pipes: dict[str, Pipe] = {}
    for k, p in net.pipes.items():
        if k == pipe_id:
            pipes[half_a] = p1
            pipes[half_b] = p2
        else:
            pipes[k] = p
    nodes = dict(net.nodes)
    nodes[node_id] = leak_node
    leaks = dict(net.leaks)
    leaks[pipe_id] = LeakSite(pipe, node_id, (half_a, half_b))
    return dataclasses.replace(net, nodes=nodes, pipes=pipes, leaks=leaks)


def set_orifice(net: Network, pipe_id: str, orifice_diameter: float) -> Network:
    """Change the orifice of an already inserted leak."""
    site = net.leaks[pipe_id]
    nodes = dict(net.nodes)
    nodes[site.node] = dataclasses.replace(nodes[site.node], orifice=float(orifice_diameter))
    return dataclasses.replace(net, nodes=nodes)


def remove_midpoint_leak(net: Network, pipe_id: str) -> Network:
    """Inverse of :func:`insert_midpoint_leak`."""
    site = net.leaks[pipe_id]
    pipes: dict[str, Pipe] = {}
    for k, p in net.pipes.items():
        if k == site.halves[0]:
            pipes[pipe_id] = site.pipe
        elif k == site.halves[1]:
            continue
        else:
            pipes[k] = p
    nodes = {k: n for k, n in net.nodes.items() if k != site.node}
    leaks = {k: s for k, s in net.leaks.items() if k != pipe_id}
    return dataclasses.replace(net, nodes=nodes, pipes=pipes, leaks=leaks)


def pipe_index_map(net: Network) -> dict[str, np.ndarray]:
    """Map each original pipe id to the indices of its current segments."""
    out: dict[str, list[int]] = {}
    for i, p in enumerate(net.pipes.values()):
        out.setdefault(p.original_id, []).append(i)
    return {k: np.asarray(v, dtype=int) for k, v in out.items()}
