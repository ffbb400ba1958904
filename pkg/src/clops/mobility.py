"""Microscopic vehicle simulation.

IDM car-following on a per-link, per-lane basis, fixed-time signal control,
free-flow shortest-path routing with closure/advisory-aware rerouting, and
Poisson fleet generation with a CV penetration rate. Advanced in fixed 0.1 s
steps; each partition of the road network steps independently between
barriers.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .netgraph import RoadGraph
from .util import DT_S, quantize, quantize_speed, stable_seed, stable_uniform, to_frame

EMERGENCY_DECEL = 8.0  # applied when an insertion leaves a non-positive gap


class MobilityError(Exception):
    pass


class VehicleKind(str, Enum):
    CV = "cv"
    NON_CV = "non_cv"


@dataclass(frozen=True)
class IdmParams:
    v0: float = 20.0
    headway_s: float = 1.5
    a_max: float = 1.4
    b_comf: float = 2.0
    s0: float = 2.0
    length: float = 5.0


DEFAULT_IDM = IdmParams()


@dataclass
class Vehicle:
    vid: int
    kind: VehicleKind
    link: str
    lane: int
    pos_m: float
    speed_mps: float
    route: tuple[str, ...]
    route_idx: int
    depart_frame: int
    params: IdmParams = DEFAULT_IDM
    informed: set = field(default_factory=set)

    @property
    def destination(self) -> str:
        return self.route[-1]

    def is_cv(self) -> bool:
        return self.kind is VehicleKind.CV


@dataclass(frozen=True)
class SignalPhase:
    approaches: tuple[str, ...]
    green_s: float
    yellow_s: float


@dataclass(frozen=True)
class SignalController:
    node: str
    phases: tuple[SignalPhase, ...]
    offset_s: float = 0.0

    def cycle_s(self) -> float:
        return sum(p.green_s + p.yellow_s for p in self.phases)


@dataclass(frozen=True)
class PhaseState:
    index: int
    in_yellow: bool
    remaining_s: float


@dataclass(frozen=True)
class FlowSpec:
    origin: str
    destination: str
    rate_vph: float
    start_s: float = 0.0
    end_s: float = 3600.0


@dataclass(frozen=True)
class DemandSpec:
    penetration: float
    flows: tuple[FlowSpec, ...] = ()


@dataclass(frozen=True)
class LaneClosure:
    link: str
    lanes: tuple[int, ...] | None  # None closes every lane
    from_s: float
    to_s: float

    def active_at(self, t_s: float) -> bool:
        return self.from_s <= t_s < self.to_s

    def blocks_link(self, lane_count: int) -> bool:
        return self.lanes is None or len(set(self.lanes)) >= lane_count


def validate_controller(ctrl: SignalController) -> None:
    if not ctrl.phases:
        raise MobilityError(f"signal at {ctrl.node}: empty phase list")
    for i, p in enumerate(ctrl.phases):
        for dur, name in ((p.green_s, "green"), (p.yellow_s, "yellow")):
            if dur < 0:
                raise MobilityError(f"signal at {ctrl.node}: negative {name} duration {dur}")
            if abs(dur * 10 - round(dur * 10)) > 1e-9:
                raise MobilityError(
                    f"signal at {ctrl.node}: phase {i} {name} duration {dur} not a 0.1 s multiple"
                )
        if p.green_s + p.yellow_s <= 0:
            raise MobilityError(f"signal at {ctrl.node}: phase {i} has zero duration")
    if ctrl.cycle_s() <= 0:
        raise MobilityError(f"signal at {ctrl.node}: zero cycle duration")


def signal_phase(ctrl: SignalController, t_s: float) -> PhaseState:
    """Active phase at time t with remaining green/yellow, half-open boundaries."""
    cycle_f = to_frame(ctrl.cycle_s())
    tau = (to_frame(t_s) + to_frame(ctrl.offset_s)) % cycle_f
    start = 0
    for i, p in enumerate(ctrl.phases):
        green_f, yellow_f = to_frame(p.green_s), to_frame(p.yellow_s)
        if tau < start + green_f:
            return PhaseState(i, False, (start + green_f - tau) / 10.0)
        if tau < start + green_f + yellow_f:
            return PhaseState(i, True, (start + green_f + yellow_f - tau) / 10.0)
        start += green_f + yellow_f
    raise AssertionError("phase walk exhausted cycle")


def signal_colors(ctrl: SignalController, t_s: float) -> dict[str, str]:
    """Color per served approach link; links absent from the map are red."""
    st = signal_phase(ctrl, t_s)
    color = "yellow" if st.in_yellow else "green"
    return {lid: color for lid in ctrl.phases[st.index].approaches}


def idm_accel(
    speed_mps: float,
    gap_m: float | None,
    leader_speed_mps: float,
    params: IdmParams = DEFAULT_IDM,
    v0_mps: float | None = None,
) -> float:
    """IDM acceleration; gap_m None means a free road ahead.

    The returned value is clamped so one 0.1 s step can never produce a
    negative speed. A non-positive gap (possible right after a barrier
    insertion) triggers an emergency stop instead of the model formula.
    """
    v0 = params.v0 if v0_mps is None else v0_mps
    if gap_m is not None and gap_m <= 0:
        return max(-EMERGENCY_DECEL, -speed_mps / DT_S)
    free = params.a_max * (1.0 - (speed_mps / v0) ** 4)
    if gap_m is None:
        a = free
    else:
        dv = speed_mps - leader_speed_mps
        dyn = speed_mps * params.headway_s + speed_mps * dv / (
            2.0 * math.sqrt(params.a_max * params.b_comf)
        )
        s_star = params.s0 + max(0.0, dyn)
        a = free - params.a_max * (s_star / gap_m) ** 2
    return max(a, -speed_mps / DT_S)


def shortest_route(
    graph: RoadGraph,
    origin: str,
    destination: str,
    blocked: frozenset[str] | set[str] = frozenset(),
    advisory_links: frozenset[str] | set[str] = frozenset(),
    advisory_multiplier: float = 5.0,
) -> tuple[str, ...] | None:
    """Deterministic Dijkstra over free-flow travel times, as a link sequence.

    Blocked links cost infinity (skipped); advisory-flagged links cost their
    free-flow time times the multiplier. Returns None when unreachable.
    """
    if origin not in graph.nodes or destination not in graph.nodes:
        raise MobilityError(f"unknown node in OD pair {origin!r}->{destination!r}")
    if origin == destination:
        return ()
    dist: dict[str, float] = {origin: 0.0}
    prev_link: dict[str, str] = {}
    heap: list[tuple[float, str]] = [(0.0, origin)]
    done: set[str] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == destination:
            break
        for lid in graph.out_links[u]:
            if lid in blocked:
                continue
            l = graph.links[lid]
            cost = l.free_flow_s() * (advisory_multiplier if lid in advisory_links else 1.0)
            nd = d + cost
            v = l.to
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                prev_link[v] = lid
                heapq.heappush(heap, (nd, v))
    if destination not in prev_link:
        return None
    route: list[str] = []
    node = destination
    while node != origin:
        lid = prev_link[node]
        route.append(lid)
        node = graph.links[lid].frm
    return tuple(reversed(route))


def reroute(
    vehicle: Vehicle,
    graph: RoadGraph,
    blocked: frozenset[str] | set[str] = frozenset(),
    advisory_links: frozenset[str] | set[str] = frozenset(),
    advisory_multiplier: float = 5.0,
) -> tuple[str, ...]:
    """Recompute the route tail from the current link's end node.

    Falls back to the unchanged route when the destination becomes
    unreachable under the blocked set.
    """
    cur = graph.links[vehicle.link]
    dest_node = graph.links[vehicle.route[-1]].to
    if cur.to == dest_node:
        return vehicle.route
    tail = shortest_route(
        graph, cur.to, dest_node, blocked, advisory_links, advisory_multiplier
    )
    if tail is None:
        return vehicle.route
    return vehicle.route[: vehicle.route_idx + 1] + tail


def generate_fleet(
    graph: RoadGraph,
    demand: DemandSpec,
    seed: int,
    penetration: float | None = None,
) -> list[Vehicle]:
    """Seeded Poisson departure schedule for every flow, sorted by departure.

    Each vehicle is independently CV with the penetration probability (drawn
    from a per-vehicle stable hash so later penetration changes can redraw a
    suffix of the schedule without disturbing earlier vehicles).
    """
    pen = demand.penetration if penetration is None else penetration
    if not 0.0 <= pen <= 1.0:
        raise MobilityError(f"penetration {pen} outside [0, 1]")
    arrivals: list[tuple[float, int]] = []
    for fi, flow in enumerate(demand.flows):
        if flow.rate_vph < 0:
            raise MobilityError(f"flow {fi} has negative rate")
        if flow.rate_vph == 0:
            continue
        rng = random.Random(stable_seed(seed, "flow", fi))
        t = flow.start_s
        while True:
            t += rng.expovariate(flow.rate_vph / 3600.0)
            if t >= flow.end_s:
                break
            arrivals.append((t, fi))
    arrivals.sort()

    route_cache: dict[tuple[str, str], tuple[str, ...]] = {}
    fleet: list[Vehicle] = []
    for vid, (t, fi) in enumerate(arrivals):
        flow = demand.flows[fi]
        od = (flow.origin, flow.destination)
        if od not in route_cache:
            r = shortest_route(graph, flow.origin, flow.destination)
            if not r:
                raise MobilityError(f"unreachable OD pair {od[0]!r}->{od[1]!r}")
            route_cache[od] = r
        route = route_cache[od]
        kind = VehicleKind.CV if stable_uniform(seed, "cv", vid) < pen else VehicleKind.NON_CV
        depart_frame = max(1, int(math.ceil(t / DT_S - 1e-9)))
        fleet.append(
            Vehicle(
                vid=vid,
                kind=kind,
                link=route[0],
                lane=0,
                pos_m=0.0,
                speed_mps=0.0,
                route=route,
                route_idx=0,
                depart_frame=depart_frame,
            )
        )
    return fleet


def redraw_kinds(
    fleet: list[Vehicle], seed: int, command_id: int, rate: float, after_frame: int
) -> None:
    """Redraw CV membership of not-yet-departed vehicles at a new rate."""
    for v in fleet:
        if v.depart_frame > after_frame:
            u = stable_uniform(seed, "setpen", command_id, v.vid)
            v.kind = VehicleKind.CV if u < rate else VehicleKind.NON_CV


@dataclass
class ArrivalRecord:
    vid: int
    kind: VehicleKind
    origin: str
    destination: str
    depart_frame: int
    arrive_frame: int
    informed: bool = False

    @property
    def travel_s(self) -> float:
        return (self.arrive_frame - self.depart_frame) * DT_S


@dataclass
class StepOutput:
    handoffs: list[Vehicle]
    arrivals: list[ArrivalRecord]


def _can_stop(speed: float, gap: float, b_comf: float) -> bool:
    return speed * speed <= 2.0 * b_comf * max(gap, 0.0)


class MobilityPartition:
    """Vehicle state and stepping for one partition of the road network.

    Owns the vehicles currently on its links; exactly one partition owns a
    vehicle at any instant. Vehicles crossing onto a link owned by another
    partition are emitted as handoffs and inserted there at the barrier.
    """

    def __init__(self, pid: int, graph: RoadGraph, link_owner: dict[str, int]):
        self.pid = pid
        self.graph = graph
        self.link_owner = link_owner
        self.owned_links = sorted(l for l, p in link_owner.items() if p == pid)
        self.lanes: dict[tuple[str, int], list[Vehicle]] = {}

    def insert(self, vehicle: Vehicle) -> None:
        if self.link_owner.get(vehicle.link) != self.pid:
            raise MobilityError(
                f"vehicle {vehicle.vid} on link {vehicle.link!r} not owned by partition {self.pid}"
            )
        self.lanes.setdefault((vehicle.link, vehicle.lane), []).append(vehicle)

    def spawn(self, vehicle: Vehicle) -> None:
        """Activate a departure: least-occupied lane at the origin link start."""
        link = self.graph.links[vehicle.link]
        counts = [
            (len(self.lanes.get((vehicle.link, ln), [])), ln) for ln in range(link.lanes)
        ]
        vehicle.lane = min(counts)[1]
        self.insert(vehicle)

    def vehicles(self) -> list[Vehicle]:
        out = []
        for key in sorted(self.lanes):
            out.extend(self.lanes[key])
        return out

    def vehicle_count(self) -> int:
        return sum(len(q) for q in self.lanes.values())

    def step(
        self,
        frame: int,
        red_or_closed: dict[str, frozenset[int]],
        yellow_links: frozenset[str],
    ) -> StepOutput:
        """Advance every owned vehicle by one 0.1 s frame.

        red_or_closed maps a link id to the set of lanes blocked at its stop
        line this frame (red signal blocks all lanes). Update order is by
        link id, then position descending, but speeds are computed from the
        pre-step state so results do not depend on that order.
        """
        graph = self.graph
        next_speed: dict[tuple[str, int], list[float]] = {}

        for key in sorted(self.lanes):
            q = self.lanes[key]
            if not q:
                continue
            q.sort(key=lambda v: (-v.pos_m, v.vid))
            lid, lane = key
            link = graph.links[lid]
            llen = link.length_m
            blocked_lanes = red_or_closed.get(lid)
            blocked = blocked_lanes is not None and lane in blocked_lanes
            yellow = lid in yellow_links
            speeds = []
            for i, veh in enumerate(q):
                v0 = min(veh.params.v0, link.speed_limit_mps)
                if i == 0:
                    stop_gap = llen - veh.pos_m
                    if blocked or (yellow and _can_stop(veh.speed_mps, stop_gap, veh.params.b_comf)):
                        gap, lead_v = stop_gap, 0.0
                    else:
                        gap, lead_v = None, 0.0
                else:
                    ahead = q[i - 1]
                    gap = ahead.pos_m - ahead.params.length - veh.pos_m
                    lead_v = ahead.speed_mps
                a = idm_accel(veh.speed_mps, gap, lead_v, veh.params, v0)
                speeds.append(quantize_speed(max(0.0, veh.speed_mps + a * DT_S)))
            next_speed[key] = speeds

        handoffs: list[Vehicle] = []
        arrivals: list[ArrivalRecord] = []
        moved: list[Vehicle] = []
        for key in sorted(next_speed):
            q = self.lanes[key]
            speeds = next_speed[key]
            remaining: list[Vehicle] = []
            for veh, v_new in zip(q, speeds):
                veh.speed_mps = v_new
                veh.pos_m = quantize(veh.pos_m + v_new * DT_S)
                placed = True
                while veh.pos_m >= graph.links[veh.link].length_m:
                    over = veh.pos_m - graph.links[veh.link].length_m
                    if veh.route_idx + 1 >= len(veh.route):
                        arrivals.append(
                            ArrivalRecord(
                                veh.vid,
                                veh.kind,
                                graph.links[veh.route[0]].frm,
                                graph.links[veh.route[-1]].to,
                                veh.depart_frame,
                                frame,
                                informed=bool(veh.informed),
                            )
                        )
                        placed = False
                        break
                    veh.route_idx += 1
                    nxt = graph.links[veh.route[veh.route_idx]]
                    veh.link = nxt.lid
                    veh.lane = min(veh.lane, nxt.lanes - 1)
                    veh.pos_m = quantize(over)
                    veh.speed_mps = quantize_speed(min(veh.speed_mps, nxt.speed_limit_mps))
                    if self.link_owner.get(nxt.lid, self.pid) != self.pid:
                        handoffs.append(veh)
                        placed = False
                        break
                if placed:
                    if veh.link == key[0] and veh.lane == key[1]:
                        remaining.append(veh)
                    else:
                        moved.append(veh)
            self.lanes[key] = remaining
        for veh in moved:
            self.insert(veh)
        return StepOutput(handoffs, arrivals)
