"""Synthetic scenario builders for demos, benchmarks, and tests."""

from __future__ import annotations

import json

from .scenario import Scenario, load_scenario

# degree offsets per km near 35 N on the 6367 km sphere
LAT_PER_KM = 1.0 / 111.126
LON_PER_KM = 1.0 / 91.0


def grid_scenario(
    rows: int = 3,
    cols: int = 3,
    spacing_km: float = 0.3,
    lanes: int = 1,
    speed_mps: float = 15.0,
    penetration: float = 0.5,
    rate_vph: float = 1500.0,
    demand_end_s: float = 30.0,
    signalize: bool = False,
    name: str = "grid",
) -> Scenario:
    """Bidirectional rows x cols grid with corner-to-corner demand."""
    nodes = []
    for r in range(rows):
        for c in range(cols):
            nodes.append(
                {
                    "id": f"n{r}{c}",
                    "lat": 35.0 + r * spacing_km * LAT_PER_KM,
                    "lon": -85.0 + c * spacing_km * LON_PER_KM,
                    "signalized": signalize and 0 < r < rows - 1 and 0 < c < cols - 1,
                }
            )
    links = []

    def add(a: str, b: str):
        for frm, to in ((a, b), (b, a)):
            links.append(
                {
                    "id": f"{frm}-{to}",
                    "from": frm,
                    "to": to,
                    "lanes": lanes,
                    "density": "low",
                    "speed_limit_mps": speed_mps,
                    "length_km": spacing_km,
                }
            )

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add(f"n{r}{c}", f"n{r}{c + 1}")
            if r + 1 < rows:
                add(f"n{r}{c}", f"n{r + 1}{c}")

    flows = [
        {"origin": "n00", "destination": f"n{rows - 1}{cols - 1}",
         "rate_vph": rate_vph, "start_s": 0.0, "end_s": demand_end_s},
        {"origin": f"n0{cols - 1}", "destination": f"n{rows - 1}0",
         "rate_vph": rate_vph * 0.7, "start_s": 0.0, "end_s": demand_end_s},
    ]
    doc = {
        "name": name,
        "nodes": nodes,
        "links": links,
        "demand": {"penetration": penetration, "flows": flows},
        "signals": [],
    }
    return load_scenario(json.dumps(doc))


def corridor_scenario(
    rate_vph: float = 700.0,
    demand_end_s: float = 120.0,
    penetration: float = 0.6,
    closure_from_s: float = 20.0,
    closure_to_s: float = 280.0,
    advisory_from_s: float = 5.0,
    advisory_to_s: float = 280.0,
    name: str = "corridor",
) -> Scenario:
    """Fast corridor with a slower parallel alternative, a mid-corridor lane
    closure, and an entrance RSU broadcasting the detour advisory.

    Informed CVs dive to the parallel road; everything else queues at the
    closure until it lifts. This is the closed-loop steering scenario.
    """
    nodes = []
    for r, _ in ((0, 15.0), (1, 10.0)):
        for c in range(5):
            nodes.append(
                {
                    "id": f"n{r}{c}",
                    "lat": 35.0 - r * 0.2 * LAT_PER_KM,
                    "lon": -85.0 + c * 0.4 * LON_PER_KM,
                    "signalized": r == 0 and c == 1,
                }
            )
    links = []

    def add(a: str, b: str, speed: float, length: float):
        for frm, to in ((a, b), (b, a)):
            links.append(
                {
                    "id": f"{frm}-{to}",
                    "from": frm,
                    "to": to,
                    "lanes": 1,
                    "density": "medium",
                    "speed_limit_mps": speed,
                    "length_km": length,
                }
            )

    for c in range(4):
        add(f"n0{c}", f"n0{c + 1}", 15.0, 0.4)
        add(f"n1{c}", f"n1{c + 1}", 10.0, 0.4)
    for c in range(5):
        add(f"n0{c}", f"n1{c}", 10.0, 0.2)

    doc = {
        "name": name,
        "nodes": nodes,
        "links": links,
        "demand": {
            "penetration": penetration,
            "flows": [
                {"origin": "n00", "destination": "n04",
                 "rate_vph": rate_vph, "start_s": 0.0, "end_s": demand_end_s}
            ],
        },
        "signals": [],
        "rsus": ["n01"],
        "advisories": [
            {"id": "detour1", "rsu": "n01", "links": ["n02-n03"],
             "kind": "lane_closure", "valid_from_s": advisory_from_s,
             "valid_to_s": advisory_to_s}
        ],
        "closures": [
            {"link": "n02-n03", "lanes": "all",
             "from_s": closure_from_s, "to_s": closure_to_s}
        ],
    }
    return load_scenario(json.dumps(doc))
