"""Operator-facing service: live snapshot streaming, what-if command
ingestion, and run persistence.

A session wraps the co-simulation engine in a background thread. Commands
arrive concurrently, are serialized into per-frame batches, and take effect
atomically at the next barrier frame; the acknowledgment carries that exact
frame. Snapshot fan-out uses bounded drop-oldest queues so a slow consumer
can never stall the barrier, and a full run record (config + command history
with effect frames) replays to the identical digest.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .commnet import Advisory, AdvisoryKind, LogDistance, UnitDisk
from .cosim import Engine, SimConfig, SimResult, WorldTables, write_outputs
from .mobility import (
    LaneClosure,
    SignalController,
    SignalPhase,
    redraw_kinds,
    signal_phase,
    validate_controller,
)
from .partitioner import PartitionPlan
from .scenario import Scenario, load_scenario, save_scenario
from .util import frame_time


class CommandError(Exception):
    """Command rejected: names the offending field or target."""


# --- commands -------------------------------------------------------------


@dataclass
class CloseLanes:
    cid: int
    link: str
    lanes: tuple[int, ...] | None
    from_s: float
    to_s: float
    kind: str = "close_lanes"
    affects_world = True

    def apply(self, tables: WorldTables, frame: int) -> None:
        tables.closures.append(LaneClosure(self.link, self.lanes, self.from_s, self.to_s))


@dataclass
class RetimeSignal:
    cid: int
    node: str
    phases: tuple[SignalPhase, ...]
    offset_s: float
    kind: str = "retime_signal"
    affects_world = True

    def apply(self, tables: WorldTables, frame: int) -> None:
        tables.signals[self.node] = SignalController(self.node, self.phases, self.offset_s)


@dataclass
class InjectAdvisory:
    cid: int
    advisory: Advisory
    kind: str = "inject_advisory"
    affects_world = True

    def apply(self, tables: WorldTables, frame: int) -> None:
        tables.advisories[self.advisory.aid] = self.advisory


@dataclass
class SetPenetration:
    cid: int
    rate: float
    kind: str = "set_penetration"
    affects_world = True

    def apply(self, tables: WorldTables, frame: int) -> None:
        redraw_kinds(tables.fleet, tables.seed, self.cid, self.rate, frame)


@dataclass
class Pause:
    cid: int
    kind: str = "pause"
    affects_world = False

    def apply(self, tables, frame):  # wall-clock only
        pass


@dataclass
class Resume:
    cid: int
    kind: str = "resume"
    affects_world = False

    def apply(self, tables, frame):
        pass


@dataclass
class SetRate:
    cid: int
    rate: float | None  # sim-seconds per wall-second; None = unthrottled
    kind: str = "set_rate"
    affects_world = False

    def apply(self, tables, frame):
        pass


Command = CloseLanes | RetimeSignal | InjectAdvisory | SetPenetration | Pause | Resume | SetRate


def command_from_json(doc: dict, cid: int) -> Command:
    kind = doc.get("kind")
    try:
        if kind == "close_lanes":
            lanes = doc.get("lanes", "all")
            lanes_t = None if lanes == "all" else tuple(int(x) for x in lanes)
            return CloseLanes(cid, str(doc["link"]), lanes_t, float(doc["from_s"]), float(doc["to_s"]))
        if kind == "retime_signal":
            phases = tuple(
                SignalPhase(tuple(str(a) for a in p["approaches"]),
                            float(p.get("green_s", 0.0)), float(p.get("yellow_s", 0.0)))
                for p in doc["phases"]
            )
            return RetimeSignal(cid, str(doc["node"]), phases, float(doc.get("offset_s", 0.0)))
        if kind == "inject_advisory":
            adv = Advisory(
                str(doc["id"]), str(doc["rsu"]), tuple(str(l) for l in doc["links"]),
                AdvisoryKind(str(doc.get("advisory_kind", "detour"))),
                float(doc["valid_from_s"]), float(doc["valid_to_s"]),
            )
            return InjectAdvisory(cid, adv)
        if kind == "set_penetration":
            return SetPenetration(cid, float(doc["rate"]))
        if kind == "pause":
            return Pause(cid)
        if kind == "resume":
            return Resume(cid)
        if kind == "set_rate":
            rate = doc.get("rate")
            return SetRate(cid, None if rate in (None, 0, "unlimited") else float(rate))
    except (KeyError, TypeError, ValueError) as exc:
        raise CommandError(f"malformed {kind} command: {exc}") from exc
    raise CommandError(f"unknown command kind {kind!r}")


def command_to_json(cmd: Command) -> dict:
    if isinstance(cmd, CloseLanes):
        return {"kind": cmd.kind, "link": cmd.link,
                "lanes": "all" if cmd.lanes is None else list(cmd.lanes),
                "from_s": cmd.from_s, "to_s": cmd.to_s}
    if isinstance(cmd, RetimeSignal):
        return {"kind": cmd.kind, "node": cmd.node, "offset_s": cmd.offset_s,
                "phases": [{"approaches": list(p.approaches), "green_s": p.green_s,
                            "yellow_s": p.yellow_s} for p in cmd.phases]}
    if isinstance(cmd, InjectAdvisory):
        a = cmd.advisory
        return {"kind": cmd.kind, "id": a.aid, "rsu": a.rsu_node, "links": list(a.links),
                "advisory_kind": a.kind.value, "valid_from_s": a.valid_from_s,
                "valid_to_s": a.valid_to_s}
    if isinstance(cmd, SetPenetration):
        return {"kind": cmd.kind, "rate": cmd.rate}
    if isinstance(cmd, SetRate):
        return {"kind": cmd.kind, "rate": cmd.rate}
    return {"kind": cmd.kind}


def validate_command(cmd: Command, scenario: Scenario) -> None:
    g = scenario.graph
    if isinstance(cmd, CloseLanes):
        if cmd.link not in g.links:
            raise CommandError(f"unknown link {cmd.link!r}")
        if cmd.lanes is not None:
            for ln in cmd.lanes:
                if not 0 <= ln < g.links[cmd.link].lanes:
                    raise CommandError(f"lane {ln} outside link {cmd.link!r}")
        if not cmd.from_s < cmd.to_s:
            raise CommandError("closure window is empty")
    elif isinstance(cmd, RetimeSignal):
        if cmd.node not in g.nodes:
            raise CommandError(f"unknown node {cmd.node!r}")
        ctrl = SignalController(cmd.node, cmd.phases, cmd.offset_s)
        try:
            validate_controller(ctrl)
        except Exception as exc:
            raise CommandError(str(exc)) from exc
        for p in cmd.phases:
            for a in p.approaches:
                if a not in g.links:
                    raise CommandError(f"unknown link {a!r}")
                if g.links[a].to != cmd.node:
                    raise CommandError(f"link {a!r} does not approach {cmd.node!r}")
    elif isinstance(cmd, InjectAdvisory):
        adv = cmd.advisory
        if adv.rsu_node not in scenario.rsu_nodes:
            raise CommandError(f"no RSU at node {adv.rsu_node!r}")
        for l in adv.links:
            if l not in g.links:
                raise CommandError(f"unknown link {l!r}")
    elif isinstance(cmd, SetPenetration):
        if not 0.0 <= cmd.rate <= 1.0:
            raise CommandError(f"penetration {cmd.rate} outside [0, 1]")
    elif isinstance(cmd, SetRate):
        if cmd.rate is not None and cmd.rate <= 0:
            raise CommandError("rate must be positive or null")


# --- config serialization ---------------------------------------------------


def config_to_doc(cfg: SimConfig) -> dict:
    reception = (
        {"kind": "unit_disk", "radius_m": cfg.reception.radius_m}
        if isinstance(cfg.reception, UnitDisk)
        else {
            "kind": "log_distance",
            "ref_range_m": cfg.reception.ref_range_m,
            "exponent": cfg.reception.exponent,
            "threshold_db": cfg.reception.threshold_db,
            "tx_power_db": cfg.reception.tx_power_db,
            "fading_sigma_db": cfg.reception.fading_sigma_db,
        }
    )
    return {
        "scenario": json.loads(save_scenario(cfg.scenario)),
        "mobility_plan": json.loads(cfg.mobility_plan.to_json()),
        "comm_plan": json.loads(cfg.comm_plan.to_json()),
        "workers": cfg.workers,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "reception": reception,
        "penetration": cfg.penetration,
        "work_factor": cfg.work_factor,
        "mode": cfg.mode,
        "executor": cfg.executor,
        "advisory_multiplier": cfg.advisory_multiplier,
    }


def config_from_doc(doc: dict) -> SimConfig:
    rec = doc.get("reception", {"kind": "unit_disk", "radius_m": 300.0})
    if rec["kind"] == "unit_disk":
        reception = UnitDisk(rec["radius_m"])
    else:
        reception = LogDistance(
            rec["ref_range_m"], rec["exponent"], rec["threshold_db"],
            rec.get("tx_power_db", 0.0), rec.get("fading_sigma_db", 0.0),
        )
    return SimConfig(
        scenario=load_scenario(json.dumps(doc["scenario"])),
        mobility_plan=PartitionPlan.from_json(json.dumps(doc["mobility_plan"])),
        comm_plan=PartitionPlan.from_json(json.dumps(doc["comm_plan"])),
        workers=int(doc.get("workers", 1)),
        seed=int(doc.get("seed", 0)),
        duration_s=float(doc.get("duration_s", 60.0)),
        reception=reception,
        penetration=doc.get("penetration"),
        work_factor=int(doc.get("work_factor", 0)),
        mode=str(doc.get("mode", "clsim")),
        executor=str(doc.get("executor", "thread")),
        advisory_multiplier=float(doc.get("advisory_multiplier", 5.0)),
    )


# --- sessions ----------------------------------------------------------------


@dataclass
class _PendingCommand:
    cmd: Command
    done: threading.Event = field(default_factory=threading.Event)
    effect_frame: int | None = None


class _Subscriber:
    def __init__(self, every_n: int, maxlen: int = 32):
        self.every_n = max(1, every_n)
        self.queue: deque = deque(maxlen=maxlen)
        self.dropped = False
        self.cond = threading.Condition()

    def push(self, snapshot: dict) -> None:
        with self.cond:
            if len(self.queue) == self.queue.maxlen:
                self.queue.popleft()
                self.dropped = True
            if self.dropped:
                snapshot = dict(snapshot)
                snapshot["gap"] = True
                self.dropped = False
            self.queue.append(snapshot)
            self.cond.notify_all()

    def pop(self, timeout: float = 1.0) -> dict | None:
        with self.cond:
            if not self.queue:
                self.cond.wait(timeout)
            return self.queue.popleft() if self.queue else None


class SimSession:
    """One steerable simulation run: engine thread + command/snapshot plumbing."""

    def __init__(self, sid: str, cfg: SimConfig, rate: float | None = 1.0):
        self.sid = sid
        self.cfg = cfg
        self.rate = rate
        self.state = "created"
        self.result: SimResult | None = None
        self.error: str | None = None
        self._cid = itertools.count(1)
        self._pending: list[_PendingCommand] = []
        self._history: list[dict] = []
        self._subs: list[_Subscriber] = []
        self._lock = threading.Lock()
        self._paused = threading.Event()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._frame = 0
        self._last_snapshot: dict | None = None
        self._wall_start = 0.0

    # engine callbacks -------------------------------------------------------

    def _command_source(self, frame: int) -> list[Command]:
        with self._lock:
            batch, self._pending = self._pending, []
        out = []
        for pending in batch:
            pending.effect_frame = frame
            self._history.append(
                {
                    "cid": pending.cmd.cid,
                    "effect_frame": frame,
                    "command": command_to_json(pending.cmd),
                }
            )
            if pending.cmd.affects_world:
                out.append(pending.cmd)
            pending.done.set()
        return out

    def _frame_hook(self, info: dict):
        self._frame = info["frame"]
        snapshot = self._build_snapshot(info)
        self._last_snapshot = snapshot
        for sub in list(self._subs):
            if info["frame"] % sub.every_n == 0:
                sub.push(snapshot)
        if self.rate:
            target = self._wall_start + info["t"] / self.rate
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        while self._paused.is_set() and not self._stop.is_set():
            keepalive = dict(snapshot)
            keepalive["paused"] = True
            for sub in list(self._subs):
                sub.push(keepalive)
            time.sleep(0.25)
        if self._stop.is_set():
            return "stop"
        return None

    def _build_snapshot(self, info: dict) -> dict:
        t = info["t"]
        vehicles = [
            {
                "id": vid, "kind": kind, "link": link, "lane": lane,
                "pos_m": pos, "speed_mps": speed, "partition": pid,
                "informed": bool(informed),
            }
            for vid, kind, link, lane, pos, speed, pid, informed in info["records"]
        ]
        per_part: dict[int, int] = {}
        for v in vehicles:
            per_part[v["partition"]] = per_part.get(v["partition"], 0) + 1
        signals = []
        t_prev = max(0.0, t - 0.1)
        for node in sorted(info["signals"]):
            st = signal_phase(info["signals"][node], t_prev)
            signals.append(
                {"node": node, "phase": st.index, "yellow": st.in_yellow,
                 "remaining_s": st.remaining_s}
            )
        counters = info["counters"]
        arrivals = counters.get("arrivals", 0)
        return {
            "type": "snapshot",
            "session": self.sid,
            "frame": info["frame"],
            "t": t,
            "paused": self._paused.is_set(),
            "vehicles": vehicles,
            "partitions": [
                {"partition": p, "vehicles": n} for p, n in sorted(per_part.items())
            ],
            "signals": signals,
            "closures": [
                {"link": c.link,
                 "lanes": "all" if c.lanes is None else list(c.lanes),
                 "from_s": c.from_s, "to_s": c.to_s,
                 "active": c.active_at(t)}
                for c in info.get("closures", [])
            ],
            "counters": counters,
            "informed_cvs": sum(1 for v in vehicles if v["informed"]),
            "mean_travel_s": (counters.get("travel_s_sum", 0.0) / arrivals) if arrivals else None,
            "commands_applied": len(info["commands"]),
        }

    # public API ---------------------------------------------------------------

    def start(self) -> None:
        if self.state != "created":
            raise CommandError(f"session {self.sid} already {self.state}")
        self.state = "running"
        self._wall_start = time.perf_counter()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        try:
            engine = Engine(self.cfg, command_source=self._command_source,
                            frame_hook=self._frame_hook)
            self.result = engine.run()
            self.state = "finished"
        except Exception as exc:  # surfaced through the record/state
            self.error = str(exc)
            self.state = "error"
        for sub in list(self._subs):
            sub.push({"type": "end", "session": self.sid, "state": self.state})

    def stop(self) -> None:
        self._stop.set()
        self._paused.clear()
        if self._thread is not None:
            self._thread.join(timeout=60)

    def wait(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def apply_command(self, cmd: Command, timeout: float = 60.0) -> dict:
        validate_command(cmd, self.cfg.scenario)
        if self.state not in ("created", "running"):
            raise CommandError(f"session {self.sid} is {self.state}")
        if isinstance(cmd, Pause):
            self._paused.set()
            effect = self._frame + 1
            self._history.append({"cid": cmd.cid, "effect_frame": effect,
                                  "command": command_to_json(cmd)})
            return self._ack(cmd, effect)
        if isinstance(cmd, Resume):
            self._paused.clear()
            effect = self._frame + 1
            self._history.append({"cid": cmd.cid, "effect_frame": effect,
                                  "command": command_to_json(cmd)})
            return self._ack(cmd, effect)
        if isinstance(cmd, SetRate):
            self.rate = cmd.rate
            effect = self._frame + 1
            self._history.append({"cid": cmd.cid, "effect_frame": effect,
                                  "command": command_to_json(cmd)})
            return self._ack(cmd, effect)
        pending = _PendingCommand(cmd)
        with self._lock:
            self._pending.append(pending)
        if not pending.done.wait(timeout):
            raise CommandError("command not picked up before timeout (session stalled?)")
        return self._ack(cmd, pending.effect_frame)

    def _ack(self, cmd: Command, effect_frame: int) -> dict:
        return {
            "accepted": True,
            "command_id": cmd.cid,
            "effect_frame": effect_frame,
            "effect_t": frame_time(effect_frame),
        }

    def next_cid(self) -> int:
        return next(self._cid)

    def subscribe(self, every_n: int = 1, maxlen: int = 32) -> _Subscriber:
        sub = _Subscriber(every_n, maxlen=maxlen)
        self._subs.append(sub)
        if self._last_snapshot is not None:
            catchup = dict(self._last_snapshot)
            catchup["catchup"] = True  # out-of-cadence: current state on join
            sub.push(catchup)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        if sub in self._subs:
            self._subs.remove(sub)

    def run_record(self) -> dict:
        if self.result is None:
            raise CommandError(f"session {self.sid} has no finished result")
        return {
            "session": self.sid,
            "config": config_to_doc(self.cfg),
            "frames": self.result.frames,
            "commands": self._history,
            "digest": self.result.digest,
            "cv_digest": self.result.cv_digest,
            "counters": self.result.counters,
        }


# --- run records ------------------------------------------------------------


def save_run(session: SimSession, path: str | Path, outputs_dir: str | Path | None = None) -> dict:
    record = session.run_record()
    if outputs_dir is not None and session.result is not None:
        record["manifest"] = write_outputs(session.result, outputs_dir)
        record["outputs_dir"] = str(outputs_dir)
    text = json.dumps(record, indent=2)
    record["record_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    Path(path).write_text(json.dumps(record, indent=2))
    return record


def load_run(path: str | Path) -> dict:
    try:
        record = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"unreadable run record: {exc}") from exc
    for key in ("config", "commands", "digest"):
        if key not in record:
            raise CommandError(f"run record integrity error: missing {key!r}")
    claimed = record.get("record_sha256")
    if claimed is not None:
        body = dict(record)
        body.pop("record_sha256")
        text = json.dumps(body, indent=2)
        if hashlib.sha256(text.encode()).hexdigest() != claimed:
            raise CommandError("run record integrity error: checksum mismatch")
    if "manifest" in record and record.get("outputs_dir"):
        out = Path(record["outputs_dir"])
        for name, sha in record["manifest"].items():
            p = out / name
            if not p.exists():
                raise CommandError(f"run record integrity error: missing output {name}")
            if hashlib.sha256(p.read_bytes()).hexdigest() != sha:
                raise CommandError(f"run record integrity error: {name} modified")
    return record


def replay_run(record: dict) -> SimResult:
    """Re-execute a recorded run: same config, commands at their recorded
    effect frames. The digest must reproduce exactly."""
    cfg = config_from_doc(record["config"])
    if record.get("frames") is not None:
        cfg = copy.copy(cfg)
        cfg.duration_s = record["frames"] / 10.0
    schedule: dict[int, list[Command]] = {}
    for entry in record["commands"]:
        cmd = command_from_json(entry["command"], entry["cid"])
        if cmd.affects_world:
            schedule.setdefault(entry["effect_frame"], []).append(cmd)

    def source(frame: int) -> list[Command]:
        return schedule.get(frame, [])

    result = Engine(cfg, command_source=source).run()
    if result.digest != record["digest"]:
        raise CommandError(
            f"replay digest {result.digest} does not match recorded {record['digest']}"
        )
    return result


# --- HTTP service -------------------------------------------------------------


class ControlServer:
    """Message-framed JSON over HTTP: request/response endpoints plus a
    newline-delimited snapshot stream per session."""

    def __init__(
        self,
        base_cfg: SimConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        record_dir: str | Path | None = None,
        session_limit: int = 8,
        default_rate: float | None = 1.0,
    ):
        self.base_cfg = base_cfg
        self.record_dir = Path(record_dir) if record_dir else None
        self.session_limit = session_limit
        self.default_rate = default_rate
        self.sessions: dict[str, SimSession] = {}
        self._next_session = itertools.count(1)
        self._lock = threading.Lock()
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self._server_thread: threading.Thread | None = None

    # session management ---------------------------------------------------

    def create_session(self, overrides: dict) -> SimSession:
        with self._lock:
            if len(self.sessions) >= self.session_limit:
                raise CommandError(f"session limit {self.session_limit} reached")
            sid = f"s{next(self._next_session)}"
        cfg = copy.copy(self.base_cfg)
        for key in ("seed", "duration_s", "workers", "penetration", "work_factor", "executor"):
            if key in overrides and overrides[key] is not None:
                setattr(cfg, key, overrides[key])
        cfg.retain_logs = bool(overrides.get("retain_logs", True))
        rate = overrides.get("rate", self.default_rate)
        session = SimSession(sid, cfg, rate=rate)
        self.sessions[sid] = session
        return session

    def finish_session(self, session: SimSession) -> dict | None:
        session.stop()
        session.wait(timeout=120)
        if session.result is None:
            return None
        if self.record_dir is not None:
            self.record_dir.mkdir(parents=True, exist_ok=True)
            return save_run(session, self.record_dir / f"{session.sid}.json")
        return session.run_record()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def start_background(self) -> None:
        self._server_thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._server_thread.start()

    def shutdown(self) -> None:
        for session in self.sessions.values():
            session.stop()
        self.httpd.shutdown()
        self.httpd.server_close()


def _make_handler(server: ControlServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # quiet by default
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def _json(self, code: int, doc: dict):
            body = json.dumps(doc).encode()
            self.send_response(code)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b"{}"
            try:
                doc = json.loads(raw or b"{}")
            except json.JSONDecodeError as exc:
                raise CommandError(f"invalid JSON body: {exc}") from exc
            if not isinstance(doc, dict):
                raise CommandError("body must be a JSON object")
            return doc

        def _session(self, sid: str) -> SimSession:
            session = server.sessions.get(sid)
            if session is None:
                raise CommandError(f"unknown session {sid!r}")
            return session

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_POST(self):
            try:
                parts = urlparse(self.path).path.strip("/").split("/")
                if parts == ["sessions"]:
                    session = server.create_session(self._read_json())
                    self._json(201, {"session_id": session.sid, "state": session.state})
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "start":
                    session = self._session(parts[1])
                    session.start()
                    self._json(200, {"session_id": session.sid, "state": session.state})
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "stop":
                    session = self._session(parts[1])
                    record = server.finish_session(session)
                    self._json(200, {"session_id": session.sid, "state": session.state,
                                     "digest": record["digest"] if record else None})
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "commands":
                    session = self._session(parts[1])
                    doc = self._read_json()
                    cmd = command_from_json(doc, session.next_cid())
                    ack = session.apply_command(cmd)
                    self._json(200, ack)
                else:
                    self._json(404, {"error": f"no such endpoint {self.path}"})
            except CommandError as exc:
                self._json(400, {"error": str(exc)})
            except Exception as exc:  # pragma: no cover - defensive
                self._json(500, {"error": f"internal error: {exc}"})

        def do_GET(self):
            try:
                url = urlparse(self.path)
                parts = url.path.strip("/").split("/")
                if parts == ["scenario"]:
                    self._json(200, json.loads(save_scenario(server.base_cfg.scenario)))
                elif parts == ["plans"]:
                    self._json(
                        200,
                        {
                            "mobility": json.loads(server.base_cfg.mobility_plan.to_json()),
                            "comm": json.loads(server.base_cfg.comm_plan.to_json()),
                        },
                    )
                elif parts == ["sessions"]:
                    self._json(200, {
                        "sessions": [
                            {"session_id": s.sid, "state": s.state, "frame": s._frame,
                             "duration_s": s.cfg.duration_s}
                            for s in server.sessions.values()
                        ]
                    })
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "record":
                    session = self._session(parts[1])
                    self._json(200, session.run_record())
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "stream":
                    self._stream(parts[1], url)
                else:
                    self._json(404, {"error": f"no such endpoint {self.path}"})
            except CommandError as exc:
                self._json(400, {"error": str(exc)})
            except (BrokenPipeError, ConnectionResetError):
                pass
            except Exception as exc:  # pragma: no cover - defensive
                self._json(500, {"error": f"internal error: {exc}"})

        def _stream(self, sid: str, url):
            session = self._session(sid)
            query = parse_qs(url.query)
            every = int(query.get("every", ["1"])[0])
            buffer = min(65536, int(query.get("buffer", ["32"])[0]))
            sub = session.subscribe(every, maxlen=buffer)
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()

            def write_chunk(obj: dict) -> None:
                data = (json.dumps(obj) + "\n").encode()
                self.wfile.write(f"{len(data):x}\r\n".encode() + data + b"\r\n")
                self.wfile.flush()

            try:
                idle = 0.0
                while True:
                    snap = sub.pop(timeout=0.5)
                    if snap is None:
                        if session.state in ("finished", "error"):
                            write_chunk({"type": "end", "state": session.state})
                            break
                        idle += 0.5
                        if idle >= 2.0:
                            write_chunk({"type": "keepalive", "t": session._frame / 10.0})
                            idle = 0.0
                        continue
                    idle = 0.0
                    write_chunk(snap)
                    if snap.get("type") == "end":
                        break
                self.wfile.write(b"0\r\n\r\n")
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                session.unsubscribe(sub)

    return Handler
