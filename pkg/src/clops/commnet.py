"""DSRC communication model.

Connected vehicles broadcast one basic safety message per 0.1 s frame; RSUs
sit at signalized intersections and rebroadcast active advisories. Reception
is evaluated by a pluggable model (unit-disk or log-distance with optional
fading) instead of a full protocol stack; delivered advisories close the loop
by triggering reroutes in the mobility engine.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .netgraph import GeoPoint, RoadGraph, bearing_deg, haversine_km
from .mobility import Vehicle, VehicleKind
from .util import stable_seed


class CommError(Exception):
    pass


@dataclass(frozen=True)
class Bsm:
    sender: int
    t_s: float
    pos: GeoPoint
    speed_mps: float
    heading_deg: float


@dataclass(frozen=True)
class Rsu:
    rid: str
    node: str
    pos: GeoPoint


class AdvisoryKind(str, Enum):
    DETOUR = "detour"
    LANE_CLOSURE = "lane_closure"


@dataclass(frozen=True)
class Advisory:
    aid: str
    rsu_node: str
    links: tuple[str, ...]
    kind: AdvisoryKind
    valid_from_s: float
    valid_to_s: float

    def __post_init__(self):
        if not self.links:
            raise CommError(f"advisory {self.aid}: empty link set")
        if not self.valid_from_s < self.valid_to_s:
            raise CommError(f"advisory {self.aid}: empty validity interval")

    def valid_at(self, t_s: float) -> bool:
        return self.valid_from_s <= t_s < self.valid_to_s


@dataclass(frozen=True)
class UnitDisk:
    radius_m: float

    def __post_init__(self):
        if self.radius_m <= 0:
            raise CommError("unit-disk radius must be positive")


@dataclass(frozen=True)
class LogDistance:
    """Log-distance path loss on a received-power proxy.

    Delivered iff tx_power_db - 10*exponent*log10(d/ref_range_m) >= threshold_db,
    plus an optional seeded Gaussian fading term (off by default).
    """

    ref_range_m: float = 10.0
    exponent: float = 2.5
    threshold_db: float = -30.0
    tx_power_db: float = 0.0
    fading_sigma_db: float = 0.0

    def __post_init__(self):
        if self.ref_range_m <= 0 or self.exponent <= 0:
            raise CommError("log-distance parameters must be positive")

    def cutoff_m(self) -> float:
        """Fading-free delivery range from inverting the path-loss formula."""
        margin = self.tx_power_db - self.threshold_db
        return self.ref_range_m * 10.0 ** (margin / (10.0 * self.exponent))


ReceptionModel = UnitDisk | LogDistance


def link_geo(graph: RoadGraph, link_id: str, pos_m: float) -> GeoPoint:
    """Position along a link as lat/lon by linear interpolation between endpoints."""
    l = graph.links[link_id]
    a = graph.nodes[l.frm].pos
    b = graph.nodes[l.to].pos
    f = pos_m / l.length_m
    return GeoPoint(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))


def emit_bsm(vehicle: Vehicle, graph: RoadGraph, t_s: float) -> Bsm:
    if vehicle.kind is not VehicleKind.CV:
        raise CommError(f"vehicle {vehicle.vid} is not a CV")
    l = graph.links[vehicle.link]
    heading = bearing_deg(graph.nodes[l.frm].pos, graph.nodes[l.to].pos)
    return Bsm(vehicle.vid, t_s, link_geo(graph, vehicle.link, vehicle.pos_m), vehicle.speed_mps, heading)


def emit_bsms(cvs: list[Vehicle], graph: RoadGraph, t_s: float) -> list[Bsm]:
    """Exactly one BSM per CV for the frame at t_s."""
    return [emit_bsm(v, graph, t_s) for v in cvs]


def _fading_db(model: LogDistance, seed: int, sender, receiver, t_s: float) -> float:
    if model.fading_sigma_db <= 0:
        return 0.0
    rng = random.Random(stable_seed(seed, "fade", sender, receiver, round(t_s * 10)))
    return rng.gauss(0.0, model.fading_sigma_db)


def received_power_db(model: LogDistance, distance_m: float) -> float:
    d = max(distance_m, 1e-3)
    return model.tx_power_db - 10.0 * model.exponent * math.log10(d / model.ref_range_m)


def deliver(
    bsm: Bsm,
    candidates: list[tuple[object, GeoPoint]],
    model: ReceptionModel,
    seed: int = 0,
) -> set:
    """Evaluate reception of one message for each candidate receiver.

    Candidates are (receiver id, position) pairs; the sender never receives
    its own broadcast. With fading off this is deterministic and independent
    of candidate order.
    """
    delivered = set()
    for rid, pos in candidates:
        if rid == bsm.sender:
            continue
        d_m = haversine_km(bsm.pos, pos) * 1000.0
        if isinstance(model, UnitDisk):
            if d_m <= model.radius_m:
                delivered.add(rid)
        else:
            power = received_power_db(model, d_m) + _fading_db(model, seed, bsm.sender, rid, bsm.t_s)
            if power >= model.threshold_db:
                delivered.add(rid)
    return delivered


def batch_distances_m(
    lat0: float, lon0: float, lats: np.ndarray, lons: np.ndarray
) -> np.ndarray:
    """Vectorized haversine distances in meters from one point to many."""
    phi0 = math.radians(lat0)
    phis = np.radians(lats)
    dphi = np.radians(lats - lat0) / 2.0
    dlmb = np.radians(lons - lon0) / 2.0
    a = np.sin(dphi) ** 2 + math.cos(phi0) * np.cos(phis) * np.sin(dlmb) ** 2
    return 2.0 * 6367000.0 * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def batch_deliver(
    bsm: Bsm,
    receiver_ids: list,
    lats: np.ndarray,
    lons: np.ndarray,
    model: ReceptionModel,
    seed: int = 0,
) -> list:
    """Vectorized counterpart of deliver() over parallel receiver arrays."""
    if not receiver_ids:
        return []
    d = batch_distances_m(bsm.pos.lat, bsm.pos.lon, lats, lons)
    if isinstance(model, UnitDisk):
        ok = d <= model.radius_m
    else:
        power = model.tx_power_db - 10.0 * model.exponent * np.log10(
            np.maximum(d, 1e-3) / model.ref_range_m
        )
        if model.fading_sigma_db > 0:
            fade = np.array(
                [_fading_db(model, seed, bsm.sender, rid, bsm.t_s) for rid in receiver_ids]
            )
            power = power + fade
        ok = power >= model.threshold_db
    return [rid for rid, hit in zip(receiver_ids, ok) if hit and rid != bsm.sender]


def advisory_beacon(advisory: Advisory, rsu: Rsu, t_s: float) -> Bsm:
    """The advisory broadcast reuses the BSM envelope with the RSU as sender."""
    return Bsm(rsu.rid, t_s, rsu.pos, 0.0, 0.0)


def disseminate_advisory(
    advisory: Advisory,
    rsus: list[Rsu],
    cvs: list[tuple[int, VehicleKind, GeoPoint]],
    model: ReceptionModel,
    t_s: float,
    informed: frozenset[int] = frozenset(),
    seed: int = 0,
) -> frozenset[int]:
    """One broadcast step: the informed set after frame t_s (monotone).

    Each issuing RSU broadcasts once per frame while the advisory is valid;
    only CVs can be informed, on their first successful delivery.
    """
    if not advisory.valid_at(t_s):
        return informed
    out = set(informed)
    candidates = [(vid, pos) for vid, kind, pos in cvs if kind is VehicleKind.CV]
    for rsu in sorted(rsus, key=lambda r: r.rid):
        if rsu.node != advisory.rsu_node:
            continue
        beacon = advisory_beacon(advisory, rsu, t_s)
        out |= deliver(beacon, candidates, model, seed)
    return frozenset(out)


def mark_informed(vehicle: Vehicle, advisory: Advisory) -> bool:
    """Record an advisory reaching a vehicle; True exactly once per pair.

    Non-CVs are never informed. The caller triggers a reroute only on a True
    return, which is what makes repeated deliveries idempotent.
    """
    if vehicle.kind is not VehicleKind.CV:
        return False
    if advisory.aid in vehicle.informed:
        return False
    vehicle.informed.add(advisory.aid)
    return True
