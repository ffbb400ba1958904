"""The closed-loop parallel kernel.

Every worker owns a disjoint set of mobility partitions paired with the
communication partitions it evaluates receptions for. A frame is 0.1 s; per
frame each worker (A) steps its vehicles and emits messages, the controllers
exchange handoffs/messages/vehicle locations at a barrier, (B) each worker
evaluates receptions for its communication partitions and applies operator
commands, informs are exchanged at a second barrier, and (C) newly informed
vehicles reroute. All cross-worker application orders are globally sorted, so
any worker count, any executor, and the sequential driver produce bit
identical digests.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing as mp
import queue
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .commnet import Advisory, LogDistance, ReceptionModel, UnitDisk, batch_deliver, Bsm, mark_informed
from .mobility import (
    ArrivalRecord,
    LaneClosure,
    MobilityPartition,
    SignalController,
    Vehicle,
    VehicleKind,
    generate_fleet,
    reroute,
    signal_colors,
)
from .netgraph import GeoPoint, RoadGraph, bearing_deg
from .partitioner import PartitionPlan
from .scenario import Scenario
from .util import DT_S, frame_time, stable_seed

DIGEST_SEED = b"\x00" * 8


class EngineError(Exception):
    pass


@dataclass
class SimConfig:
    scenario: Scenario
    mobility_plan: PartitionPlan
    comm_plan: PartitionPlan
    workers: int = 1
    seed: int = 0
    duration_s: float = 60.0
    reception: ReceptionModel = UnitDisk(300.0)
    penetration: float | None = None
    work_factor: int = 0
    mode: str = "clsim"  # "clsim" | "hils"
    executor: str = "thread"  # "sequential" | "thread" | "process"
    advisory_multiplier: float = 5.0
    retain_logs: bool = True
    hils_feed: "dict | None" = None

    def validate(self) -> None:
        if self.workers < 1:
            raise EngineError("worker count must be >= 1")
        frames = self.duration_s * 10
        if abs(frames - round(frames)) > 1e-9:
            raise EngineError(f"duration {self.duration_s} is not a 0.1 s multiple")
        for plan in (self.mobility_plan, self.comm_plan):
            missing = set(self.scenario.graph.nodes) - set(plan.assignment)
            if missing:
                raise EngineError(f"{plan.mode.value} plan misses nodes {sorted(missing)[:3]}")
        if self.mode not in ("clsim", "hils"):
            raise EngineError(f"unknown mode {self.mode!r}")
        if self.mode == "hils" and self.hils_feed is None:
            raise EngineError("hils mode needs a replay feed")
        if self.penetration is not None and not 0.0 <= self.penetration <= 1.0:
            raise EngineError("penetration outside [0, 1]")

    @property
    def frames(self) -> int:
        return round(self.duration_s * 10)


@dataclass
class WorldTables:
    """Mutable per-worker replica of the steerable world state.

    Commands mutate these tables identically on every worker at the same
    frame, which keeps partition-local decisions consistent without any
    shared memory.
    """

    signals: dict[str, SignalController]
    closures: list[LaneClosure]
    advisories: dict[str, Advisory]
    fleet: list[Vehicle]
    seed: int

    def blocked_links(self, t_s: float, graph: RoadGraph) -> frozenset[str]:
        out = set()
        for c in self.closures:
            if c.to_s > t_s and c.blocks_link(graph.links[c.link].lanes):
                out.add(c.link)
        return frozenset(out)


@dataclass
class ScalingRow:
    workers: int
    compute_fraction: float
    exchange_fraction: float
    speedup: float
    crossover: bool
    wall_s: float


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    p_star: int | None

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "p_star": self.p_star,
        }


@dataclass
class SimResult:
    digest: str
    cv_digest: str
    frames: int
    arrivals: list[ArrivalRecord]
    counters: dict
    series: dict
    trajectories: list[tuple] | None
    bsm_rows: list[tuple] | None
    timings: list[dict]
    wall_s: float


def plan_lookahead(graph: RoadGraph, plan: PartitionPlan, comm_coupling_active: bool) -> float:
    """Conservative advance interval for the partitioned mobility layer.

    The mobility bound is the fastest possible traversal of any cut link;
    whenever connected vehicles are coupled in, the 0.1 s message period
    binds instead. Rounded down to the frame lattice, minimum one frame.
    """
    asn = plan.assignment
    bound = math.inf
    for l in graph.links.values():
        if asn[l.frm] != asn[l.to]:
            bound = min(bound, l.length_m / l.speed_limit_mps)
    if comm_coupling_active:
        bound = min(bound, DT_S)
    if math.isinf(bound):
        return bound
    return max(DT_S, math.floor(bound * 10.0 + 1e-9) / 10.0)


def _digest_mix(prev: bytes, blob: bytes) -> bytes:
    return hashlib.blake2b(prev + blob, digest_size=8).digest()


def _busy_work(units: int) -> int:
    acc = 0x12345678
    for _ in range(units):
        acc = (acc * 1664525 + 1013904223) & 0xFFFFFFFF
    return acc


class SimWorker:
    """One worker's mobility partitions paired with its comm partitions."""

    def __init__(self, cfg: SimConfig, worker_id: int):
        self.cfg = cfg
        self.wid = worker_id
        self.graph = cfg.scenario.graph
        P = cfg.workers
        mob_asn = cfg.mobility_plan.assignment
        comm_asn = cfg.comm_plan.assignment
        self.link_owner = {l.lid: mob_asn[l.frm] for l in self.graph.links.values()}
        self.link_comm_part = {l.lid: comm_asn[l.frm] for l in self.graph.links.values()}
        self.my_parts = sorted(p for p in set(mob_asn.values()) if p % P == worker_id)
        self.partitions = {
            p: MobilityPartition(p, self.graph, self.link_owner) for p in self.my_parts
        }
        self.my_comm_parts = {p for p in set(comm_asn.values()) if p % P == worker_id}
        self.tables = WorldTables(
            signals=dict(cfg.scenario.signals),
            closures=list(cfg.scenario.closures),
            advisories={a.aid: a for a in cfg.scenario.advisories},
            fleet=[],
            seed=cfg.seed,
        )
        self.rsus = [
            r for r in cfg.scenario.rsus() if comm_asn[r.node] % P == worker_id
        ]
        self.vehicle_index: dict[int, Vehicle] = {}
        self._bearing = {
            l.lid: bearing_deg(self.graph.nodes[l.frm].pos, self.graph.nodes[l.to].pos)
            for l in self.graph.links.values()
        }
        self.compute_ns = 0
        self.exchange_ns = 0
        self._clock = time.perf_counter_ns
        # replay scripts (hils mode): vid -> dict frame -> (kind, link, lane, pos, speed)
        self.scripts: dict[int, dict[int, tuple]] = {}
        self.script_kind: dict[int, str] = {}
        if cfg.mode == "hils":
            feed = cfg.hils_feed or {}
            for vid, entry in feed.get("vehicles", {}).items():
                self.scripts[int(vid)] = {int(f): tuple(s) for f, s in entry["samples"].items()}
                self.script_kind[int(vid)] = entry["kind"]

    def load_fleet(self, fleet: list[Vehicle]) -> None:
        """Keep the departures whose origin link lives on this worker."""
        P = self.cfg.workers
        self.tables.fleet = [
            v for v in fleet if self.link_owner[v.route[0]] % P == self.wid
        ]

    # geometry -------------------------------------------------------------

    def _geo(self, link_id: str, pos_m: float) -> tuple[float, float]:
        l = self.graph.links[link_id]
        a = self.graph.nodes[l.frm].pos
        b = self.graph.nodes[l.to].pos
        f = pos_m / l.length_m
        return (a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))

    # frame phases ---------------------------------------------------------

    def step_phase(self, frame: int) -> dict:
        """Phase A: spawn, step mobility, emit messages and location records."""
        t0 = self._clock()
        t_prev = frame_time(frame - 1)
        t = frame_time(frame)
        P = self.cfg.workers

        departs = 0
        handoffs: list[Vehicle] = []
        arrivals: list[ArrivalRecord] = []
        records: list[tuple] = []
        messages: list[tuple] = []
        recv_records: list[tuple] = []

        if self.cfg.mode == "clsim":
            red_or_closed, yellow_links = self._control_state(t_prev)
            for v in self.tables.fleet:
                if v.depart_frame == frame:
                    pid = self.link_owner[v.route[0]]
                    self.partitions[pid].spawn(v)
                    self.vehicle_index[v.vid] = v
                    departs += 1
            for pid in self.my_parts:
                out = self.partitions[pid].step(frame, red_or_closed, yellow_links)
                handoffs.extend(out.handoffs)
                arrivals.extend(out.arrivals)
            for v in handoffs:
                self.vehicle_index.pop(v.vid, None)
            for a in arrivals:
                self.vehicle_index.pop(a.vid, None)
            for pid in self.my_parts:
                for v in self.partitions[pid].vehicles():
                    records.append(
                        (v.vid, v.kind.value, v.link, v.lane, v.pos_m, v.speed_mps, pid,
                         1 if v.informed else 0)
                    )
            for v in handoffs:
                records.append(
                    (v.vid, v.kind.value, v.link, v.lane, v.pos_m, v.speed_mps,
                     self.link_owner[v.link], 1 if v.informed else 0)
                )
        else:
            # hils: scripted bodies; a worker materializes the script samples
            # that fall on its partitions this frame
            for vid in sorted(self.scripts):
                sample = self.scripts[vid].get(frame)
                if sample is None:
                    continue
                link, lane, pos, speed = sample
                pid = self.link_owner[link]
                if pid % P != self.wid:
                    continue
                kind = self.script_kind[vid]
                records.append((vid, kind, link, lane, pos, speed, pid, 0))
                prev = self.scripts[vid].get(frame - 1)
                if prev is None:
                    departs += 1
            # script completion counts as arrival on the worker that held it last
            for vid in sorted(self.scripts):
                prev = self.scripts[vid].get(frame - 1)
                if prev is not None and self.scripts[vid].get(frame) is None:
                    link = prev[0]
                    if self.link_owner[link] % P == self.wid:
                        arrivals.append(
                            ArrivalRecord(vid, VehicleKind(self.script_kind[vid]),
                                          self.graph.links[link].frm,
                                          self.graph.links[link].to,
                                          min(self.scripts[vid]), frame - 1)
                        )

        # messages + receiver location records from the post-step state
        for rec in records:
            vid, kind, link, lane, pos, speed, pid, _ = rec
            if kind != VehicleKind.CV.value:
                continue
            lat, lon = self._geo(link, pos)
            messages.append(("bsm", vid, None, lat, lon, speed, self._bearing[link], self.wid))
            recv_records.append((vid, lat, lon, self.link_comm_part[link]))
        for aid in sorted(self.tables.advisories):
            adv = self.tables.advisories[aid]
            if not adv.valid_at(t):
                continue
            for rsu in self.rsus:
                if rsu.node == adv.rsu_node:
                    messages.append(
                        ("beacon", rsu.rid, aid, rsu.pos.lat, rsu.pos.lon, 0.0, 0.0, self.wid)
                    )
        self.compute_ns += self._clock() - t0
        return {
            "worker": self.wid,
            "handoffs": handoffs,
            "messages": messages,
            "recv_records": recv_records,
            "records": records,
            "arrivals": arrivals,
            "departs": departs,
        }

    def _control_state(self, t_s: float):
        red_or_closed: dict[str, frozenset[int]] = {}
        yellow_links: set[str] = set()
        owned_links = {l for p in self.my_parts for l in self.partitions[p].owned_links}
        for node in sorted(self.tables.signals):
            ctrl = self.tables.signals[node]
            colors = signal_colors(ctrl, t_s)
            for lid in self.graph.in_links.get(node, ()):
                if lid not in owned_links:
                    continue
                color = colors.get(lid, "red")
                if color == "red":
                    red_or_closed[lid] = frozenset(range(self.graph.links[lid].lanes))
                elif color == "yellow":
                    yellow_links.add(lid)
        for c in self.tables.closures:
            if not c.active_at(t_s):
                continue
            if c.link not in owned_links:
                continue
            lanes = frozenset(range(self.graph.links[c.link].lanes)) if c.lanes is None else frozenset(c.lanes)
            red_or_closed[c.link] = red_or_closed.get(c.link, frozenset()) | lanes
        return red_or_closed, frozenset(yellow_links)

    def exchange_phase(self, frame: int, globals_b: dict) -> dict:
        """Phase B: insert handoffs, evaluate receptions, apply commands."""
        t0 = self._clock()
        t = frame_time(frame)
        for v in sorted(globals_b["handoffs"], key=lambda x: x.vid):
            pid = self.link_owner[v.link]
            self.partitions[pid].insert(v)
            self.vehicle_index[v.vid] = v

        receivers = list(globals_b["recv_records"])  # (vid, lat, lon, comm_part)
        for rsu in self.rsus:
            receivers.append((rsu.rid, rsu.pos.lat, rsu.pos.lon, None))
        informs: list[tuple[str, int]] = []
        delivered_local = delivered_cross = 0
        if receivers:
            ids = [r[0] for r in receivers]
            lats = np.array([r[1] for r in receivers])
            lons = np.array([r[2] for r in receivers])
            cv_ids = {r[0] for r in receivers if r[3] is not None}
            for msg in globals_b["messages"]:
                kind, sender, aid, lat, lon, speed, heading, origin = msg
                bsm = Bsm(sender, t, GeoPoint(lat, lon), speed, heading)
                delivered = batch_deliver(bsm, ids, lats, lons, self.cfg.reception, self.cfg.seed)
                if self.cfg.work_factor:
                    _busy_work(self.cfg.work_factor * len(delivered))
                if origin == self.wid:
                    delivered_local += len(delivered)
                else:
                    delivered_cross += len(delivered)
                if kind == "beacon":
                    informs.extend((aid, rid) for rid in delivered if rid in cv_ids)
        for cmd in sorted(globals_b["commands"], key=lambda c: c.cid):
            cmd.apply(self.tables, frame)
        self.compute_ns += self._clock() - t0
        return {
            "worker": self.wid,
            "informs": sorted(set(informs)),
            "delivered_local": delivered_local,
            "delivered_cross": delivered_cross,
        }

    def inform_phase(self, frame: int, informs: list[tuple[str, int]]) -> None:
        """Phase C: mark newly informed vehicles and reroute them."""
        t0 = self._clock()
        if self.cfg.mode == "clsim" and informs:
            t = frame_time(frame)
            blocked = self.tables.blocked_links(t, self.graph)
            for aid, vid in informs:
                veh = self.vehicle_index.get(vid)
                if veh is None:
                    continue
                adv = self.tables.advisories.get(aid)
                if adv is None or not mark_informed(veh, adv):
                    continue
                veh.route = reroute(
                    veh, self.graph, blocked, set(adv.links), self.cfg.advisory_multiplier
                )
        self.compute_ns += self._clock() - t0

    def final_stats(self) -> dict:
        return {
            "worker": self.wid,
            "compute_ns": self.compute_ns,
            "exchange_ns": self.exchange_ns,
        }


class Hub:
    """Coordinator: routes barrier frames, digests state, checks conservation."""

    def __init__(self, cfg: SimConfig, command_source=None, frame_hook=None):
        self.cfg = cfg
        self.P = cfg.workers
        self.command_source = command_source
        self.frame_hook = frame_hook
        graph = cfg.scenario.graph
        mob = cfg.mobility_plan.assignment
        comm = cfg.comm_plan.assignment
        self.link_owner = {l.lid: mob[l.frm] for l in graph.links.values()}
        self.node_comm = dict(comm)
        self.digest = DIGEST_SEED
        self.cv_digest = DIGEST_SEED
        self.departed = 0
        self.arrived = 0
        self.arrivals: list[ArrivalRecord] = []
        self.series = {"vehicles": [], "cvs": [], "bsms": [], "handoffs": [],
                       "delivered": [], "informed": []}
        self.counters = {"departures": 0, "arrivals": 0, "bsms": 0,
                         "delivered_local": 0, "delivered_cross": 0,
                         "handoffs": 0, "informs": 0,
                         "travel_s_sum": 0.0,
                         "informed_arrivals": 0, "informed_travel_s_sum": 0.0}
        self.trajectories: list[tuple] | None = [] if cfg.retain_logs else None
        self.bsm_rows: list[tuple] | None = [] if cfg.retain_logs else None
        self.informed_pairs: set[tuple[str, int]] = set()
        self.tables = WorldTables(
            signals=dict(cfg.scenario.signals),
            closures=list(cfg.scenario.closures),
            advisories={a.aid: a for a in cfg.scenario.advisories},
            fleet=[],
            seed=cfg.seed,
        )
        self.commands_seen: list = []
        self.last_route_ns = 0
        self.stop_requested = False
        self.frames_completed = 0

    def commands_for(self, frame: int) -> list:
        cmds = list(self.command_source(frame)) if self.command_source else []
        for c in cmds:
            c.apply(self.tables, frame)
        self.commands_seen.extend(cmds)
        return cmds

    def route_step(self, outs: list[dict], frame: int) -> tuple[list[dict], dict]:
        """Round 1: merge phase-A outputs into per-worker exchange inputs."""
        t0 = time.perf_counter_ns()
        all_handoffs: list[Vehicle] = []
        all_messages: list[tuple] = []
        recv_by_worker: list[list[tuple]] = [[] for _ in range(self.P)]
        records: list[tuple] = []
        frame_departs = 0
        for out in sorted(outs, key=lambda o: o["worker"]):
            all_handoffs.extend(out["handoffs"])
            all_messages.extend(out["messages"])
            records.extend(out["records"])
            self.arrivals.extend(out["arrivals"])
            self.arrived += len(out["arrivals"])
            for a in out["arrivals"]:
                self.counters["travel_s_sum"] += a.travel_s
                if a.informed:
                    self.counters["informed_arrivals"] += 1
                    self.counters["informed_travel_s_sum"] += a.travel_s
            frame_departs += out["departs"]
            for rec in out["recv_records"]:
                recv_by_worker[rec[3] % self.P].append(rec)
        self.departed += frame_departs

        all_messages.sort(key=lambda m: (m[0], str(m[1]), m[2] or ""))
        all_handoffs.sort(key=lambda v: v.vid)
        records.sort(key=lambda r: r[0])

        # digest over the end-of-frame states
        lines = []
        cv_lines = []
        for vid, kind, link, lane, pos, speed, pid, informed in records:
            line = f"{frame},{vid},{link},{round(pos * 1e6)},{round(speed * 1e6)}\n"
            lines.append(line)
            if kind == VehicleKind.CV.value:
                cv_lines.append(line)
        self.digest = _digest_mix(self.digest, "".join(lines).encode())
        self.cv_digest = _digest_mix(self.cv_digest, "".join(cv_lines).encode())

        bsm_count = sum(1 for m in all_messages if m[0] == "bsm")
        cv_count = sum(1 for r in records if r[1] == VehicleKind.CV.value)
        if bsm_count != cv_count:
            raise EngineError(
                f"BSM conservation violated at frame {frame}: {bsm_count} != {cv_count}"
            )
        if self.departed != len(records) + self.arrived:
            raise EngineError(
                f"vehicle conservation violated at frame {frame}: "
                f"departed {self.departed} != present {len(records)} + arrived {self.arrived}"
            )
        seen_ids = [r[0] for r in records]
        if len(seen_ids) != len(set(seen_ids)):
            raise EngineError(f"duplicate vehicle state at frame {frame}")

        self.counters["departures"] = self.departed
        self.counters["arrivals"] = self.arrived
        self.counters["bsms"] += bsm_count
        self.counters["handoffs"] += len(all_handoffs)
        self.series["vehicles"].append(len(records))
        self.series["cvs"].append(cv_count)
        self.series["bsms"].append(bsm_count)
        self.series["handoffs"].append(len(all_handoffs))
        self.series["informed"].append(sum(r[7] for r in records))
        if self.trajectories is not None:
            t = frame_time(frame)
            for vid, kind, link, lane, pos, speed, pid, informed in records:
                self.trajectories.append((t, vid, kind, link, lane, pos, speed))
            for m in all_messages:
                if m[0] == "bsm":
                    self.bsm_rows.append((t, m[1], m[3], m[4], m[5], m[6]))

        commands = self.commands_for(frame)
        globals_b = []
        for w in range(self.P):
            globals_b.append(
                {
                    "handoffs": [v for v in all_handoffs if self.link_owner[v.link] % self.P == w],
                    "messages": all_messages,
                    "recv_records": recv_by_worker[w],
                    "commands": commands,
                }
            )
        self._frame_records = records
        self.last_route_ns = time.perf_counter_ns() - t0
        return globals_b, {"records": records}

    def route_exchange(self, outs: list[dict], frame: int) -> list[tuple[str, int]]:
        """Round 2: merge inform events into one global, sorted batch."""
        t0 = time.perf_counter_ns()
        informs: set[tuple[str, int]] = set()
        delivered = 0
        for out in sorted(outs, key=lambda o: o["worker"]):
            informs.update(out["informs"])
            self.counters["delivered_local"] += out["delivered_local"]
            self.counters["delivered_cross"] += out["delivered_cross"]
            delivered += out["delivered_local"] + out["delivered_cross"]
        self.series["delivered"].append(delivered)
        # first successful delivery informs; repeats never cross the barrier again
        batch = sorted(informs - self.informed_pairs)
        self.informed_pairs.update(batch)
        self.counters["informs"] += len(batch)
        self.frames_completed = frame
        if self.frame_hook is not None:
            verdict = self.frame_hook(
                {
                    "frame": frame,
                    "t": frame_time(frame),
                    "records": self._frame_records,
                    "counters": dict(self.counters),
                    "signals": self.tables.signals,
                    "closures": list(self.tables.closures),
                    "commands": list(self.commands_seen),
                }
            )
            if verdict == "stop":
                self.stop_requested = True
        self.last_route_ns = time.perf_counter_ns() - t0
        return batch


def _worker_loop(worker: SimWorker, chan, clock_ns):
    """Request/response loop shared by thread and process executors.

    The wait for each message includes the coordinator's routing time, which
    every worker sits through identically; the message carries that duration
    so only transport plus barrier straggling is booked as exchange.
    """
    worker._clock = clock_ns
    frame = 0
    try:
        while True:
            t0 = time.perf_counter_ns()
            msg = chan.recv()
            wait = time.perf_counter_ns() - t0
            tag = msg[0]
            hub_ns = msg[-1]
            worker.exchange_ns += max(0, wait - hub_ns)
            if tag == "STEP":
                _, frame, informs, _ = msg
                worker.inform_phase(frame - 1, informs)
                out = worker.step_phase(frame)
                t0 = time.perf_counter_ns()
                chan.send(out)
                worker.exchange_ns += time.perf_counter_ns() - t0
            elif tag == "EXCHANGE":
                _, frame, globals_b, _ = msg
                out = worker.exchange_phase(frame, globals_b)
                t0 = time.perf_counter_ns()
                chan.send(out)
                worker.exchange_ns += time.perf_counter_ns() - t0
            elif tag == "DONE":
                _, frame, informs, _ = msg
                worker.inform_phase(frame, informs)
                chan.send(worker.final_stats())
                return
    except Exception as exc:
        chan.send({"__error__": f"{type(exc).__name__}: {exc}",
                   "worker": worker.wid, "frame": frame,
                   "partitions": worker.my_parts})


class _QueueChannel:
    """In-process bidirectional channel out of two queues."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self.inbox = inbox
        self.outbox = outbox

    def recv(self):
        return self.inbox.get()

    def send(self, obj):
        self.outbox.put(obj)


class Engine:
    def __init__(self, cfg: SimConfig, command_source=None, frame_hook=None):
        cfg.validate()
        self.cfg = cfg
        self.command_source = command_source
        self.frame_hook = frame_hook

    def _build_workers(self) -> list[SimWorker]:
        cfg = self.cfg
        workers = [SimWorker(cfg, w) for w in range(cfg.workers)]
        if cfg.mode == "clsim":
            fleet = generate_fleet(
                cfg.scenario.graph, cfg.scenario.demand, cfg.seed, cfg.penetration
            )
            for w in workers:
                w.load_fleet(fleet)
        return workers

    def run(self) -> SimResult:
        started = time.perf_counter()
        hub = Hub(self.cfg, self.command_source, self.frame_hook)
        if self.cfg.executor == "sequential":
            timings = self._drive_inline(hub)
        elif self.cfg.executor == "thread":
            timings = self._drive_channels(hub, kind="thread")
        elif self.cfg.executor == "process":
            timings = self._drive_channels(hub, kind="process")
        else:
            raise EngineError(f"unknown executor {self.cfg.executor!r}")
        wall = time.perf_counter() - started
        hub.arrivals.sort(key=lambda a: (a.arrive_frame, a.vid))
        return SimResult(
            digest=hub.digest.hex(),
            cv_digest=hub.cv_digest.hex(),
            frames=hub.frames_completed,
            arrivals=hub.arrivals,
            counters=hub.counters,
            series=hub.series,
            trajectories=hub.trajectories,
            bsm_rows=hub.bsm_rows,
            timings=timings,
            wall_s=wall,
        )

    def _drive_inline(self, hub: Hub) -> list[dict]:
        workers = self._build_workers()
        informs: list = []
        last_frame = 0
        for frame in range(1, self.cfg.frames + 1):
            outs = []
            for w in workers:
                w.inform_phase(frame - 1, informs)
                outs.append(w.step_phase(frame))
            globals_b, _ = hub.route_step(outs, frame)
            outs_b = [w.exchange_phase(frame, globals_b[w.wid]) for w in workers]
            informs = hub.route_exchange(outs_b, frame)
            last_frame = frame
            if hub.stop_requested:
                break
        for w in workers:
            w.inform_phase(last_frame, informs)
        return [w.final_stats() for w in workers]

    def _drive_channels(self, hub: Hub, kind: str) -> list[dict]:
        workers = self._build_workers()
        P = self.cfg.workers
        chans = []
        handles = []
        if kind == "thread":
            for w in workers:
                to_worker: queue.Queue = queue.Queue()
                to_hub: queue.Queue = queue.Queue()
                chan_worker = _QueueChannel(to_worker, to_hub)
                chan_hub = _QueueChannel(to_hub, to_worker)
                th = threading.Thread(
                    target=_worker_loop,
                    args=(w, chan_worker, time.thread_time_ns),
                    daemon=True,
                )
                th.start()
                chans.append(chan_hub)
                handles.append(th)
        else:
            ctx = mp.get_context("fork")
            for w in workers:
                parent, child = ctx.Pipe()
                proc = ctx.Process(
                    target=_worker_loop, args=(w, child, time.perf_counter_ns), daemon=True
                )
                proc.start()
                chans.append(parent)
                handles.append(proc)

        def gather(frame):
            outs = []
            for w_id, chan in enumerate(chans):
                try:
                    out = chan.recv()
                except (EOFError, OSError) as exc:
                    raise EngineError(
                        f"worker {w_id} died at frame {frame}: {exc}"
                    ) from exc
                if isinstance(out, dict) and "__error__" in out:
                    raise EngineError(
                        f"worker {out['worker']} (partitions {out['partitions']}) "
                        f"failed at frame {out['frame']}: {out['__error__']}"
                    )
                outs.append(out)
            return outs

        try:
            informs: list = []
            last_frame = 0
            for frame in range(1, self.cfg.frames + 1):
                for chan in chans:
                    chan.send(("STEP", frame, informs, hub.last_route_ns))
                outs = gather(frame)
                globals_b, _ = hub.route_step(outs, frame)
                for w_id, chan in enumerate(chans):
                    chan.send(("EXCHANGE", frame, globals_b[w_id], hub.last_route_ns))
                outs_b = gather(frame)
                informs = hub.route_exchange(outs_b, frame)
                last_frame = frame
                if hub.stop_requested:
                    break
            for chan in chans:
                chan.send(("DONE", last_frame, informs, hub.last_route_ns))
            timings = gather(last_frame)
        finally:
            for h in handles:
                if kind == "process":
                    h.join(timeout=5)
                    if h.is_alive():
                        h.terminate()
        return timings


def run_sequential(cfg: SimConfig, command_source=None, frame_hook=None) -> SimResult:
    """Single-threaded oracle: all partitions stepped in partition-id order."""
    import copy

    seq_cfg = copy.copy(cfg)
    seq_cfg.executor = "sequential"
    seq_cfg.workers = 1
    return Engine(seq_cfg, command_source, frame_hook).run()


def run_parallel(cfg: SimConfig, command_source=None, frame_hook=None) -> SimResult:
    return Engine(cfg, command_source, frame_hook).run()


def scaling_harness(
    cfg_template: SimConfig,
    worker_counts: list[int],
    repetitions: int = 3,
    executor: str = "thread",
) -> ScalingReport:
    """Measure compute vs exchange fractions across worker counts.

    Fractions are over summed worker-seconds (P x wall); the crossover p* is
    the smallest worker count where the exchange fraction reaches the compute
    fraction.
    """
    import copy

    if not worker_counts:
        raise EngineError("worker count list is empty")
    rows: list[ScalingRow] = []
    base_wall = None
    for P in worker_counts:
        computes, exchanges, walls = [], [], []
        for _ in range(repetitions):
            cfg = copy.copy(cfg_template)
            cfg.workers = P
            cfg.executor = executor
            cfg.retain_logs = False
            res = Engine(cfg).run()
            total_compute = sum(t["compute_ns"] for t in res.timings)
            total_exchange = sum(t["exchange_ns"] for t in res.timings)
            denom = P * res.wall_s * 1e9
            computes.append(total_compute / denom)
            exchanges.append(total_exchange / denom)
            walls.append(res.wall_s)
        wall = statistics.median(walls)
        if base_wall is None:
            base_wall = wall
        comp = statistics.median(computes)
        exch = statistics.median(exchanges)
        rows.append(
            ScalingRow(
                workers=P,
                compute_fraction=comp,
                exchange_fraction=exch,
                speedup=base_wall / wall if wall > 0 else float("nan"),
                crossover=exch >= comp,
                wall_s=wall,
            )
        )
    p_star = next((r.workers for r in rows if r.crossover), None)
    return ScalingReport(rows, p_star)


def write_outputs(result: SimResult, out_dir: str | Path) -> dict[str, str]:
    """Write trajectory/BSM/arrival CSVs plus metrics and digest files."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {}

    def _put(name: str, text: str):
        path = out / name
        path.write_text(text)
        manifest[name] = hashlib.sha256(text.encode()).hexdigest()

    if result.trajectories is not None:
        lines = ["t,vehicle_id,kind,link,lane,pos_m,speed_mps"]
        for t, vid, kind, link, lane, pos, speed in result.trajectories:
            lines.append(f"{t!r},{vid},{kind},{link},{lane},{pos!r},{speed!r}")
        _put("trajectories.csv", "\n".join(lines) + "\n")
    if result.bsm_rows is not None:
        lines = ["t,sender,lat,lon,speed_mps,heading"]
        for t, sender, lat, lon, speed, heading in result.bsm_rows:
            lines.append(f"{t!r},{sender},{lat!r},{lon!r},{speed!r},{heading!r}")
        _put("bsm.csv", "\n".join(lines) + "\n")
    lines = ["vehicle_id,kind,origin,destination,depart_s,arrive_s,travel_s"]
    for a in result.arrivals:
        lines.append(
            f"{a.vid},{a.kind.value},{a.origin},{a.destination},"
            f"{frame_time(a.depart_frame)!r},{frame_time(a.arrive_frame)!r},{a.travel_s!r}"
        )
    _put("arrivals.csv", "\n".join(lines) + "\n")
    metrics = {
        "digest": result.digest,
        "cv_digest": result.cv_digest,
        "frames": result.frames,
        "counters": result.counters,
        "timings": result.timings,
        "wall_s": result.wall_s,
    }
    _put("metrics.json", json.dumps(metrics, indent=2))
    _put("digest.txt", result.digest + "\n")
    return manifest
