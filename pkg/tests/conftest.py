import json

import pytest

from clops.netgraph import Density, GeoPoint, RoadGraph, RoadLink, RoadNode
from clops.scenario import Scenario, load_scenario

# Roughly 0.009 degrees of latitude per kilometer on the 6367 km sphere.
DEG_PER_KM_LAT = 1.0 / 111.126


def grid_graph(rows: int, cols: int, spacing_km: float = 0.5, lanes: int = 1,
               speed: float = 15.0, signalized: bool = False) -> RoadGraph:
    """Bidirectional grid road network anchored near (35 N, -85 E)."""
    nodes = []
    for r in range(rows):
        for c in range(cols):
            nodes.append(
                RoadNode(
                    f"n{r}{c}",
                    GeoPoint(35.0 + r * spacing_km * DEG_PER_KM_LAT,
                             -85.0 + c * spacing_km * DEG_PER_KM_LAT / 0.82),
                    signalized=signalized,
                )
            )
    links = []
    def add(a, b):
        links.append(RoadLink(f"{a}-{b}", a, b, spacing_km, lanes, Density.LOW, speed))
        links.append(RoadLink(f"{b}-{a}", b, a, spacing_km, lanes, Density.LOW, speed))
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add(f"n{r}{c}", f"n{r}{c + 1}")
            if r + 1 < rows:
                add(f"n{r}{c}", f"n{r + 1}{c}")
    return RoadGraph.build(nodes, links).with_derived_lane_counts()


def scenario_doc(graph: RoadGraph, penetration=0.5, flows=(), signals=(), **extra) -> dict:
    doc = {
        "nodes": [
            {
                "id": n.nid, "lat": n.pos.lat, "lon": n.pos.lon,
                "signalized": n.signalized,
                "in_lanes": n.in_lanes, "out_lanes": n.out_lanes,
            }
            for n in graph.nodes.values()
        ],
        "links": [
            {
                "id": l.lid, "from": l.frm, "to": l.to, "lanes": l.lanes,
                "density": l.density.value, "speed_limit_mps": l.speed_limit_mps,
                "length_km": l.length_km,
            }
            for l in graph.links.values()
        ],
        "demand": {"penetration": penetration, "flows": list(flows)},
        "signals": list(signals),
    }
    doc.update(extra)
    return doc


def make_scenario(graph: RoadGraph, **kw) -> Scenario:
    return load_scenario(json.dumps(scenario_doc(graph, **kw)))


@pytest.fixture
def grid_2x3() -> RoadGraph:
    return grid_graph(2, 3)


def closure_corridor(rate_vph=700.0, demand_end=120.0, penetration=0.6,
                     closure_from=20.0, closure_to=280.0,
                     advisory_from=5.0, advisory_to=280.0) -> Scenario:
    """Two parallel corridors joined at every column, with a mid-main closure.

    The top corridor is fast; the bottom one slower. A lane closure blocks
    the third top link for a long window, and an RSU near the corridor
    entrance broadcasts a detour advisory: informed CVs dive to the bottom
    corridor, uninformed traffic queues until the closure lifts.
    """
    nodes = []
    for r, speed in ((0, 15.0), (1, 10.0)):
        for c in range(5):
            nodes.append({"id": f"n{r}{c}",
                          "lat": 35.0 - r * 0.2 / 111.126,
                          "lon": -85.0 + c * 0.4 / 91.0,
                          "signalized": r == 0 and c == 1})
    links = []

    def add(a, b, speed, length):
        links.append({"id": f"{a}-{b}", "from": a, "to": b, "lanes": 1,
                      "density": "medium", "speed_limit_mps": speed,
                      "length_km": length})
        links.append({"id": f"{b}-{a}", "from": b, "to": a, "lanes": 1,
                      "density": "medium", "speed_limit_mps": speed,
                      "length_km": length})

    for c in range(4):
        add(f"n0{c}", f"n0{c + 1}", 15.0, 0.4)
        add(f"n1{c}", f"n1{c + 1}", 10.0, 0.4)
    for c in range(5):
        add(f"n0{c}", f"n1{c}", 10.0, 0.2)

    doc = {
        "nodes": nodes,
        "links": links,
        "demand": {
            "penetration": penetration,
            "flows": [{"origin": "n00", "destination": "n04",
                       "rate_vph": rate_vph, "start_s": 0.0, "end_s": demand_end}],
        },
        "signals": [],
        "rsus": ["n01"],
        "advisories": [{"id": "detour1", "rsu": "n01", "links": ["n02-n03"],
                        "kind": "lane_closure", "valid_from_s": advisory_from,
                        "valid_to_s": advisory_to}],
        "closures": [{"link": "n02-n03", "lanes": "all",
                      "from_s": closure_from, "to_s": closure_to}],
    }
    return load_scenario(json.dumps(doc))


def dual_plan_ring() -> RoadGraph:
    """8-node ring whose mobility- and comm-optimal bisections provably differ.

    Links 0-1 and 4-5 are long and dense: cheap to cut for comm
    (density/length small), expensive for mobility. Links 2-3 and 6-7 are
    short and sparse: the opposite. Every balanced bisection of a ring cuts
    exactly two links, so the optimal cut pairs differ between the modes.
    """
    import math as _math

    nodes = []
    for i in range(8):
        ang = 2 * _math.pi * i / 8
        nodes.append(RoadNode(f"r{i}", GeoPoint(35.0 + 0.01 * _math.sin(ang),
                                                -85.0 + 0.01 * _math.cos(ang))))
    spec = {
        0: (2.5, Density.HIGH),
        4: (2.5, Density.HIGH),
        2: (0.12, Density.LOW),
        6: (0.12, Density.LOW),
    }
    links = []
    for i in range(8):
        j = (i + 1) % 8
        length, density = spec.get(i, (0.4, Density.MEDIUM))
        links.append(RoadLink(f"r{i}-r{j}", f"r{i}", f"r{j}", length, 1, density, 15.0))
        links.append(RoadLink(f"r{j}-r{i}", f"r{j}", f"r{i}", length, 1, density, 15.0))
    return RoadGraph.build(nodes, links).with_derived_lane_counts()
