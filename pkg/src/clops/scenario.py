"""Native scenario format: one JSON document holding the road graph plus the
demand, signal plans, RSU placement, and any pre-scheduled advisories and
lane closures. Loading validates every invariant and round-trips losslessly
through save.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .commnet import Advisory, AdvisoryKind, Rsu
from .mobility import (
    DemandSpec,
    FlowSpec,
    LaneClosure,
    SignalController,
    SignalPhase,
    validate_controller,
)
from .netgraph import (
    Density,
    GeoPoint,
    GraphError,
    RoadGraph,
    RoadLink,
    RoadNode,
    haversine_km,
)


class ScenarioError(Exception):
    """Schema or invariant violation in a scenario document, naming the field."""


@dataclass
class Scenario:
    graph: RoadGraph
    demand: DemandSpec
    signals: dict[str, SignalController] = field(default_factory=dict)
    rsu_nodes: tuple[str, ...] = ()
    advisories: tuple[Advisory, ...] = ()
    closures: tuple[LaneClosure, ...] = ()
    name: str = "scenario"

    def rsus(self) -> list[Rsu]:
        return [
            Rsu(f"rsu:{nid}", nid, self.graph.nodes[nid].pos) for nid in sorted(self.rsu_nodes)
        ]


def _need(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ScenarioError(f"{ctx}: missing field {key!r}")
    return obj[key]


def load_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("top level must be an object")

    nodes = []
    for i, raw in enumerate(_need(doc, "nodes", "document")):
        ctx = f"nodes[{i}]"
        nid = str(_need(raw, "id", ctx))
        try:
            pos = GeoPoint(float(_need(raw, "lat", ctx)), float(_need(raw, "lon", ctx)))
        except GraphError as exc:
            raise ScenarioError(f"{ctx}: {exc}") from exc
        nodes.append(
            RoadNode(
                nid,
                pos,
                signalized=bool(raw.get("signalized", False)),
                in_lanes=int(raw.get("in_lanes", 0)),
                out_lanes=int(raw.get("out_lanes", 0)),
            )
        )
    node_pos = {n.nid: n.pos for n in nodes}

    links = []
    explicit_length: set[str] = set()
    for i, raw in enumerate(_need(doc, "links", "document")):
        ctx = f"links[{i}]"
        lid = str(_need(raw, "id", ctx))
        frm, to = str(_need(raw, "from", ctx)), str(_need(raw, "to", ctx))
        density_raw = str(raw.get("density", "low"))
        try:
            density = Density(density_raw)
        except ValueError:
            raise ScenarioError(f"{ctx}: unknown density {density_raw!r}")
        if "length_km" in raw:
            length = float(raw["length_km"])
            explicit_length.add(lid)
        else:
            if frm not in node_pos or to not in node_pos:
                raise ScenarioError(f"{ctx}: link {lid!r} references missing node")
            length = haversine_km(node_pos[frm], node_pos[to])
        links.append(
            RoadLink(
                lid,
                frm,
                to,
                length,
                lanes=int(raw.get("lanes", 1)),
                density=density,
                speed_limit_mps=float(_need(raw, "speed_limit_mps", ctx)),
            )
        )

    try:
        graph = RoadGraph.build(nodes, links)
    except GraphError as exc:
        raise ScenarioError(str(exc)) from exc
    if all(n.in_lanes == 0 and n.out_lanes == 0 for n in nodes):
        graph = graph.with_derived_lane_counts()

    demand_raw = doc.get("demand", {"penetration": 0.0, "flows": []})
    flows = []
    for i, raw in enumerate(demand_raw.get("flows", [])):
        ctx = f"demand.flows[{i}]"
        for end in ("origin", "destination"):
            node = str(_need(raw, end, ctx))
            if node not in graph.nodes:
                raise ScenarioError(f"{ctx}: unknown node {node!r}")
        flows.append(
            FlowSpec(
                str(raw["origin"]),
                str(raw["destination"]),
                float(_need(raw, "rate_vph", ctx)),
                float(raw.get("start_s", 0.0)),
                float(raw.get("end_s", 3600.0)),
            )
        )
    penetration = float(demand_raw.get("penetration", 0.0))
    if not 0.0 <= penetration <= 1.0:
        raise ScenarioError(f"demand.penetration {penetration} outside [0, 1]")
    demand = DemandSpec(penetration, tuple(flows))

    signals: dict[str, SignalController] = {}
    for i, raw in enumerate(doc.get("signals", [])):
        ctx = f"signals[{i}]"
        node = str(_need(raw, "node", ctx))
        if node not in graph.nodes:
            raise ScenarioError(f"{ctx}: unknown node {node!r}")
        phases = []
        for j, p in enumerate(raw.get("phases", [])):
            approaches = tuple(str(a) for a in _need(p, "approaches", f"{ctx}.phases[{j}]"))
            for a in approaches:
                if a not in graph.links:
                    raise ScenarioError(f"{ctx}.phases[{j}]: unknown link {a!r}")
                if graph.links[a].to != node:
                    raise ScenarioError(
                        f"{ctx}.phases[{j}]: link {a!r} does not approach node {node!r}"
                    )
            phases.append(
                SignalPhase(approaches, float(p.get("green_s", 0.0)), float(p.get("yellow_s", 0.0)))
            )
        ctrl = SignalController(node, tuple(phases), float(raw.get("offset_s", 0.0)))
        try:
            validate_controller(ctrl)
        except Exception as exc:
            raise ScenarioError(f"{ctx}: {exc}") from exc
        signals[node] = ctrl

    rsu_nodes = []
    if "rsus" in doc:
        for nid in doc["rsus"]:
            if str(nid) not in graph.nodes:
                raise ScenarioError(f"rsus: unknown node {nid!r}")
            rsu_nodes.append(str(nid))
    else:
        rsu_nodes = [n.nid for n in nodes if n.signalized]

    advisories = []
    for i, raw in enumerate(doc.get("advisories", [])):
        ctx = f"advisories[{i}]"
        rsu_node = str(_need(raw, "rsu", ctx))
        if rsu_node not in rsu_nodes:
            raise ScenarioError(f"{ctx}: no RSU at node {rsu_node!r}")
        adv_links = tuple(str(l) for l in _need(raw, "links", ctx))
        for l in adv_links:
            if l not in graph.links:
                raise ScenarioError(f"{ctx}: unknown link {l!r}")
        advisories.append(
            Advisory(
                str(_need(raw, "id", ctx)),
                rsu_node,
                adv_links,
                AdvisoryKind(str(raw.get("kind", "detour"))),
                float(_need(raw, "valid_from_s", ctx)),
                float(_need(raw, "valid_to_s", ctx)),
            )
        )

    closures = []
    for i, raw in enumerate(doc.get("closures", [])):
        ctx = f"closures[{i}]"
        lid = str(_need(raw, "link", ctx))
        if lid not in graph.links:
            raise ScenarioError(f"{ctx}: unknown link {lid!r}")
        lanes_raw = raw.get("lanes", "all")
        lanes = None if lanes_raw == "all" else tuple(int(x) for x in lanes_raw)
        if lanes is not None:
            for ln in lanes:
                if not 0 <= ln < graph.links[lid].lanes:
                    raise ScenarioError(f"{ctx}: lane {ln} outside link {lid!r}")
        closures.append(
            LaneClosure(lid, lanes, float(_need(raw, "from_s", ctx)), float(_need(raw, "to_s", ctx)))
        )

    return Scenario(
        graph=graph,
        demand=demand,
        signals=signals,
        rsu_nodes=tuple(rsu_nodes),
        advisories=tuple(advisories),
        closures=tuple(closures),
        name=str(doc.get("name", "scenario")),
    )


def save_scenario(sc: Scenario) -> str:
    doc = {
        "name": sc.name,
        "nodes": [
            {
                "id": n.nid,
                "lat": n.pos.lat,
                "lon": n.pos.lon,
                "signalized": n.signalized,
                "in_lanes": n.in_lanes,
                "out_lanes": n.out_lanes,
            }
            for n in (sc.graph.nodes[k] for k in sorted(sc.graph.nodes))
        ],
        "links": [
            {
                "id": l.lid,
                "from": l.frm,
                "to": l.to,
                "lanes": l.lanes,
                "density": l.density.value,
                "speed_limit_mps": l.speed_limit_mps,
                "length_km": l.length_km,
            }
            for l in (sc.graph.links[k] for k in sorted(sc.graph.links))
        ],
        "demand": {
            "penetration": sc.demand.penetration,
            "flows": [
                {
                    "origin": f.origin,
                    "destination": f.destination,
                    "rate_vph": f.rate_vph,
                    "start_s": f.start_s,
                    "end_s": f.end_s,
                }
                for f in sc.demand.flows
            ],
        },
        "signals": [
            {
                "node": c.node,
                "offset_s": c.offset_s,
                "phases": [
                    {"approaches": list(p.approaches), "green_s": p.green_s, "yellow_s": p.yellow_s}
                    for p in c.phases
                ],
            }
            for c in (sc.signals[k] for k in sorted(sc.signals))
        ],
        "rsus": list(sc.rsu_nodes),
        "advisories": [
            {
                "id": a.aid,
                "rsu": a.rsu_node,
                "links": list(a.links),
                "kind": a.kind.value,
                "valid_from_s": a.valid_from_s,
                "valid_to_s": a.valid_to_s,
            }
            for a in sc.advisories
        ],
        "closures": [
            {
                "link": c.link,
                "lanes": "all" if c.lanes is None else list(c.lanes),
                "from_s": c.from_s,
                "to_s": c.to_s,
            }
            for c in sc.closures
        ],
    }
    return json.dumps(doc, indent=2)
