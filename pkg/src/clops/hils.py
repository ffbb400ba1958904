"""HILS-mode data path.

Parses heterogeneous roadway sensor logs (loop, video, signal logger, BSM),
separates CV detections from non-CV detections by cross-matching BSM streams,
reconstructs non-CV trajectories between intersections with an IDM-based
profile pinned to the boundary detections, and packages everything as a
replay feed the co-simulator drives as externally scripted vehicles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .commnet import Bsm
from .mobility import IdmParams, SignalController, idm_accel, signal_colors
from .netgraph import GeoPoint, RoadGraph, haversine_km
from .util import DT_S, quantize, quantize_speed, to_frame


class HilsError(Exception):
    pass


class InfeasibleTraceError(HilsError):
    """Detection pair cannot be met by any plausible trajectory."""


class SensorSource(str, Enum):
    LOOP = "loop"
    VIDEO = "video"
    MAGNETOMETER = "magnetometer"
    SIGNAL_LOGGER = "signal_logger"
    BSM = "bsm"


SIGNAL_EVENTS = ("green_start", "yellow_start", "det_on", "det_off", "ped_walk")

LEADER_ENGAGE_M = 150.0

# merge order for equal timestamps
_SOURCE_ORDER = {s: i for i, s in enumerate(SensorSource)}


@dataclass(frozen=True)
class SensorRecord:
    source: SensorSource
    t_s: float
    node: str | None
    lane: int | None
    payload: tuple


@dataclass
class Detection:
    node: str
    lane: int | None
    t_on: float
    t_off: float
    est_speed_mps: float | None = None
    classified: tuple = ("unclassified", None)  # ("cv", vid) | ("non_cv", anon) | ("ambiguous", None)

    def __post_init__(self):
        if self.t_on > self.t_off:
            raise HilsError(f"detection at {self.node}: t_on {self.t_on} > t_off {self.t_off}")


@dataclass
class ReconstructedTrace:
    anon_id: str
    link: str
    samples: list[tuple[int, float, float]]  # (frame, pos_m, speed_mps)
    activities: list[tuple[str, int, int]]  # (label, start_frame, end_frame)
    entry: tuple[int, float] = (0, 0.0)
    exit: tuple[int, float] = (0, 0.0)


@dataclass
class ParseIssue:
    path: str
    line: int
    reason: str


def _parse_loop_row(parts: list[str]) -> SensorRecord:
    t, node, lane, event = parts
    if event not in ("on", "off"):
        raise ValueError(f"unknown loop event {event!r}")
    return SensorRecord(SensorSource.LOOP, float(t), node, int(lane), (event,))


def _parse_video_row(parts: list[str]) -> SensorRecord:
    t, node, lane, count, speed = parts
    return SensorRecord(
        SensorSource.VIDEO, float(t), node, int(lane), (int(count), float(speed))
    )


def _parse_signal_row(parts: list[str]) -> SensorRecord:
    t, node, event = parts
    if event not in SIGNAL_EVENTS:
        raise ValueError(f"unknown signal event {event!r}")
    return SensorRecord(SensorSource.SIGNAL_LOGGER, float(t), node, None, (event,))


def _parse_bsm_row(parts: list[str]) -> SensorRecord:
    t, sender, lat, lon, speed, heading = parts
    return SensorRecord(
        SensorSource.BSM,
        float(t),
        None,
        None,
        (int(sender), float(lat), float(lon), float(speed), float(heading)),
    )


_PARSERS = {
    "loop": (_parse_loop_row, 4, SensorSource.LOOP),
    "video": (_parse_video_row, 5, SensorSource.VIDEO),
    "signal": (_parse_signal_row, 3, SensorSource.SIGNAL_LOGGER),
    "bsm": (_parse_bsm_row, 6, SensorSource.BSM),
}


def parse_sensor_logs(directory: str | Path) -> tuple[list[SensorRecord], list[ParseIssue]]:
    """Read every recognized sensor CSV in a directory into one time-ordered
    stream. Bad rows are reported and skipped; the stream continues."""
    directory = Path(directory)
    records: list[tuple] = []
    issues: list[ParseIssue] = []
    for path in sorted(directory.glob("*.csv")):
        prefix = next((p for p in _PARSERS if path.name.startswith(p)), None)
        if prefix is None:
            continue
        parser, width, _ = _PARSERS[prefix]
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or lineno == 1 and not line[0].isdigit():
                    continue  # header or blank
                parts = line.split(",")
                if len(parts) != width:
                    issues.append(ParseIssue(path.name, lineno, f"expected {width} fields"))
                    continue
                try:
                    rec = parser(parts)
                except (ValueError, KeyError) as exc:
                    issues.append(ParseIssue(path.name, lineno, str(exc)))
                    continue
                records.append((rec.t_s, _SOURCE_ORDER[rec.source], len(records), rec))
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    return [r[3] for r in records], issues


def pair_loop_detections(records: list[SensorRecord]) -> list[Detection]:
    """FIFO-pair loop on/off events per (node, lane) into detections."""
    open_on: dict[tuple, list[float]] = {}
    out: list[Detection] = []
    for rec in records:
        if rec.source is not SensorSource.LOOP:
            continue
        key = (rec.node, rec.lane)
        if rec.payload[0] == "on":
            open_on.setdefault(key, []).append(rec.t_s)
        else:
            pending = open_on.get(key)
            if pending:
                out.append(Detection(rec.node, rec.lane, pending.pop(0), rec.t_s))
    out.sort(key=lambda d: (d.t_on, d.node, d.lane if d.lane is not None else -1))
    return out


def extract_bsms(records: list[SensorRecord]) -> list[Bsm]:
    out = []
    for rec in records:
        if rec.source is not SensorSource.BSM:
            continue
        sender, lat, lon, speed, heading = rec.payload
        out.append(Bsm(sender, rec.t_s, GeoPoint(lat, lon), speed, heading))
    return out


def filter_cv(
    detections: list[Detection],
    bsms: list[Bsm],
    graph: RoadGraph,
    pos_tol_m: float = 15.0,
    time_tol_s: float = 0.5,
) -> list[Detection]:
    """Classify detections as CV, non-CV, or ambiguous by BSM cross-matching.

    A detection is CV(sender) when some BSM from that sender falls within
    pos_tol_m of the detector and within time_tol_s of [t_on, t_off]. The
    nearest sender in space wins; an exact distance tie is ambiguous; no
    match mints a fresh anonymous id.
    """
    by_time = sorted(bsms, key=lambda b: b.t_s)
    times = [b.t_s for b in by_time]
    import bisect

    anon = 0
    for det in detections:
        node_pos = graph.nodes[det.node].pos
        lo = bisect.bisect_left(times, det.t_on - time_tol_s)
        hi = bisect.bisect_right(times, det.t_off + time_tol_s)
        best: dict[int, float] = {}
        for b in by_time[lo:hi]:
            d_m = haversine_km(b.pos, node_pos) * 1000.0
            if d_m <= pos_tol_m and (b.sender not in best or d_m < best[b.sender]):
                best[b.sender] = d_m
        if not best:
            det.classified = ("non_cv", f"anon{anon:05d}")
            anon += 1
            continue
        ranked = sorted(best.items(), key=lambda kv: (kv[1], kv[0]))
        if len(ranked) > 1 and math.isclose(ranked[0][1], ranked[1][1], abs_tol=1e-9):
            det.classified = ("ambiguous", None)
        else:
            det.classified = ("cv", ranked[0][0])
    return detections


def modal_segment(samples: list[tuple[float, float]]) -> list[str]:
    """Label a (pos, speed) sample run with driving activities, merged.

    Acceleration/deceleration beyond 0.2 m/s^2 win over the speed test so
    that a standing start reads as Acceleration, not Idling.
    """
    if len(samples) < 2:
        raise HilsError("modal segmentation needs at least 2 samples")
    speeds = [s[1] for s in samples]
    labels = []
    for i, v in enumerate(speeds):
        j = min(i, len(speeds) - 2)
        a = (speeds[j + 1] - speeds[j]) / DT_S
        if a > 0.2:
            labels.append("acceleration")
        elif a < -0.2:
            labels.append("deceleration")
        elif v < 0.5:
            labels.append("idling")
        else:
            labels.append("cruising")
    merged = [labels[0]]
    for lab in labels[1:]:
        if lab != merged[-1]:
            merged.append(lab)
    return merged


def _activity_runs(samples: list[tuple[int, float, float]]) -> list[tuple[str, int, int]]:
    labels = modal_segment([(p, v) for _, p, v in samples])
    # recompute per-sample labels to find run boundaries
    speeds = [v for _, _, v in samples]
    per = []
    for i, v in enumerate(speeds):
        j = min(i, len(speeds) - 2)
        a = (speeds[j + 1] - speeds[j]) / DT_S
        if a > 0.2:
            per.append("acceleration")
        elif a < -0.2:
            per.append("deceleration")
        elif v < 0.5:
            per.append("idling")
        else:
            per.append("cruising")
    runs = []
    start = 0
    for i in range(1, len(per) + 1):
        if i == len(per) or per[i] != per[start]:
            runs.append((per[start], samples[start][0], samples[i - 1][0]))
            start = i
    assert [r[0] for r in runs] == labels
    return runs


def _simulate_profile(
    length_m: float,
    v_entry: float,
    v_cruise: float,
    speed_limit: float,
    f_entry: int,
    signal: SignalController | None,
    signal_link: str | None,
    stop_line_m: float,
    leader: dict[int, tuple[float, float]] | None,
    params: IdmParams,
    max_frames: int,
) -> list[tuple[float, float]]:
    """Forward IDM roll-out along one link until the far end is crossed.

    The leader mapping (frame -> (pos, speed)) and the signal schedule are in
    absolute frames; reds act as a standing virtual leader at the stop line.
    """
    v0 = min(v_cruise, speed_limit)
    pos, speed = 0.0, min(v_entry, v0)
    out = [(pos, speed)]
    frame = f_entry
    while pos < length_m and len(out) < max_frames:
        gap = None
        lead_v = 0.0
        if leader is not None and frame in leader:
            lp, lv = leader[frame]
            lead_gap = lp - params.length - pos
            # couple to the leader only when meaningfully close; a distant
            # probe should not perturb an otherwise consistent profile
            if 0 < lead_gap <= LEADER_ENGAGE_M:
                gap, lead_v = lead_gap, lv
        if signal is not None and pos < stop_line_m:
            red = signal_link not in signal_colors(signal, frame / 10.0)
            if red:
                stop_gap = stop_line_m - pos
                if gap is None or stop_gap < gap:
                    gap, lead_v = stop_gap, 0.0
        a = idm_accel(speed, gap, lead_v, params, v0)
        speed = quantize_speed(max(0.0, speed + a * DT_S))
        pos = quantize(pos + speed * DT_S)
        out.append((pos, speed))
        frame += 1
    return out


def reconstruct_trace(
    anon_id: str,
    graph: RoadGraph,
    link_id: str,
    t_entry: float,
    t_exit: float,
    leader_trace: dict[int, tuple[float, float]] | None = None,
    follower_trace: dict[int, tuple[float, float]] | None = None,
    signal: SignalController | None = None,
    stop_line_m: float | None = None,
    entry_speed: float | None = None,
    params: IdmParams = IdmParams(),
    warp_cap: float = 0.10,
) -> ReconstructedTrace:
    """Fill in a non-CV trajectory between an entry and exit detection.

    With bounding CV traces the body follows the leader CV by IDM and is kept
    ahead of the follower CV; otherwise it free-drives through the signal
    schedule, holding at stop_line_m (default: the link end) during red. The
    body first tries the link's free speed, absorbing residual mismatch with
    a capped uniform time warp; only when the warp cannot close the gap is
    the cruise speed searched. Both detections are always pinned exactly.
    """
    link = graph.links[link_id]
    L = link.length_m
    f0, f1 = to_frame(t_entry), to_frame(t_exit)
    if f1 <= f0:
        raise InfeasibleTraceError(f"{anon_id}: exit before entry")
    T_req = (f1 - f0) * DT_S
    if L / T_req > 1.2 * link.speed_limit_mps:
        raise InfeasibleTraceError(
            f"{anon_id}: required mean speed {L / T_req:.1f} m/s exceeds "
            f"1.2 x limit on {link_id}"
        )

    limit = 1.2 * link.speed_limit_mps
    max_frames = max((f1 - f0) * 4, 100)

    stop_at = L if stop_line_m is None else min(stop_line_m, L)

    def transit(v_cruise: float) -> list[tuple[float, float]]:
        ve = entry_speed if entry_speed is not None else v_cruise
        return _simulate_profile(
            L, ve, v_cruise, limit, f0, signal, link_id, stop_at,
            leader_trace, params, max_frames,
        )

    def warp_of(profile) -> float:
        return (len(profile) - 1) * DT_S / T_req

    # prefer realistic free driving at the posted speed; an exactly
    # consistent detection pair reproduces constant motion exactly because
    # the model acceleration vanishes at v == v0
    v_bar = L / T_req
    candidates = [min(v_bar, limit)] if abs(v_bar - link.speed_limit_mps) < 1e-9 else []
    candidates.append(link.speed_limit_mps)
    profile = None
    for v in candidates:
        trial = transit(v)
        if (1.0 - warp_cap) <= warp_of(trial) <= (1.0 + warp_cap):
            profile = trial
            break
    if profile is None:
        # search the cruise speed; T_sim decreases as cruise rises
        trial = transit(candidates[-1])
        lo, hi = (link.speed_limit_mps, limit) if warp_of(trial) > 1.0 else (0.3, link.speed_limit_mps)
        for _ in range(40):
            mid = (lo + hi) / 2.0
            trial = transit(mid)
            T_sim = (len(trial) - 1) * DT_S
            if abs(T_sim - T_req) <= DT_S / 2:
                break
            if T_sim > T_req:
                lo = mid
            else:
                hi = mid
        profile = trial
    T_sim = (len(profile) - 1) * DT_S
    if T_sim <= 0:
        raise InfeasibleTraceError(f"{anon_id}: degenerate profile")
    alpha = T_sim / T_req
    if not (1.0 - warp_cap) <= alpha <= (1.0 + warp_cap):
        raise InfeasibleTraceError(
            f"{anon_id}: time warp {alpha:.3f} outside +/-{warp_cap:.0%}"
        )

    # resample the profile at warped times; the profile may overshoot the
    # link end on its last step, so positions are scaled affinely onto [0, L]
    # rather than clamped, which would put a speed kink at the exit anchor
    raw: list[float] = []
    for k in range(f0, f1 + 1):
        tau = (k - f0) * DT_S * alpha
        idx = tau / DT_S
        i = min(int(idx), len(profile) - 1)
        frac = idx - i
        if i + 1 < len(profile):
            pos = profile[i][0] + frac * (profile[i + 1][0] - profile[i][0])
        else:
            pos = profile[i][0]
        raw.append(pos)
    scale = L / raw[-1] if raw[-1] > 0 else 1.0
    samples: list[tuple[int, float, float]] = [
        (k, raw[k - f0] * scale, 0.0) for k in range(f0, f1 + 1)
    ]
    samples[0] = (f0, 0.0, samples[0][2])
    samples[-1] = (f1, L, 0.0)
    # rear bound: stay ahead of the follower CV, then restore monotonicity
    if follower_trace:
        floor_gap = params.length + params.s0
        bounded = []
        for k, pos, v in samples:
            if k in follower_trace:
                pos = max(pos, min(L, follower_trace[k][0] + floor_gap))
            bounded.append((k, pos, v))
        run_max = 0.0
        samples = []
        for k, pos, v in bounded:
            run_max = max(run_max, pos)
            samples.append((k, run_max, v))
        samples[-1] = (f1, L, 0.0)
    # speeds by forward difference on the warped positions
    final: list[tuple[int, float, float]] = []
    for i, (k, pos, _) in enumerate(samples):
        if i + 1 < len(samples):
            v = max(0.0, (samples[i + 1][1] - pos) / DT_S)
        else:
            v = final[-1][2] if final else 0.0
        final.append((k, quantize(pos), quantize_speed(v)))
    final[0] = (f0, 0.0, final[0][2])
    final[-1] = (f1, quantize(L), final[-1][2])
    for i in range(1, len(final)):
        if final[i][1] < final[i - 1][1]:
            final[i] = (final[i][0], final[i - 1][1], final[i][2])

    return ReconstructedTrace(
        anon_id,
        link_id,
        final,
        _activity_runs(final),
        entry=(f0, 0.0),
        exit=(f1, quantize(L)),
    )


def _link_candidates(graph: RoadGraph, segs: dict, pos: GeoPoint) -> list[tuple[str, float]]:
    """Links whose segment passes through the point, with recovered pos_m."""
    tol = 1e-8  # degrees; emitted points sit within float noise of the segment
    out = []
    for lid, (la, lo, dla, dlo, length_m) in segs.items():
        denom = dla * dla + dlo * dlo
        if denom == 0:
            continue
        f = ((pos.lat - la) * dla + (pos.lon - lo) * dlo) / denom
        fc = min(1.0, max(0.0, f))
        dist = math.hypot(pos.lat - (la + fc * dla), pos.lon - (lo + fc * dlo))
        if dist <= tol:
            out.append((lid, quantize(fc * length_m)))
    return sorted(out, key=lambda c: (c[1], c[0]))


def map_match_bsms(graph: RoadGraph, bsms: list[Bsm]) -> dict[int, dict[int, tuple]]:
    """Recover (link, pos) scripts from BSM positions.

    Emitted positions lie exactly on a link's lat/lon segment, but two-way
    roads make every interior point sit on a forward/reverse twin pair, and a
    point at a node sits on every incident link. Each sender's samples are
    therefore matched as a path: keep the current link while the projected
    position is non-decreasing and interior, follow route continuity across
    nodes, and bootstrap the first link from the direction of motion.
    """
    segs = {}
    for lid in sorted(graph.links):
        l = graph.links[lid]
        a, b = graph.nodes[l.frm].pos, graph.nodes[l.to].pos
        segs[lid] = (a.lat, a.lon, b.lat - a.lat, b.lon - a.lon, l.length_m)

    by_sender: dict[int, list[Bsm]] = {}
    for bsm in bsms:
        by_sender.setdefault(bsm.sender, []).append(bsm)

    scripts: dict[int, dict[int, tuple]] = {}
    for sender in sorted(by_sender):
        samples = sorted(by_sender[sender], key=lambda b: b.t_s)
        cands = [_link_candidates(graph, segs, b.pos) for b in samples]
        for i, c in enumerate(cands):
            if not c:
                raise HilsError(
                    f"BSM from {sender} at t={samples[i].t_s} matches no link"
                )

        def bootstrap(start: int) -> tuple[str, float]:
            # choose the first link by finding a candidate whose projection
            # advances at some later sample
            for lid, pos in cands[start]:
                for later in range(start + 1, len(cands)):
                    for lid2, pos2 in cands[later]:
                        if lid2 == lid and pos2 > pos + 1e-6:
                            return (lid, pos)
                    if all(l != lid for l, _ in cands[later]):
                        break
            return cands[start][0]  # never moves: smallest projection, then id

        script: dict[int, tuple] = {}
        prev: tuple[str, float] | None = None
        for i, bsm in enumerate(samples):
            frame = to_frame(bsm.t_s)
            pick = None
            if prev is not None:
                lid_prev, pos_prev = prev
                l_prev = graph.links[lid_prev]
                same = [
                    (lid, pos)
                    for lid, pos in cands[i]
                    if lid == lid_prev
                    and pos >= pos_prev - 1e-6
                    and pos < l_prev.length_m - 1e-9
                ]
                if same:
                    pick = same[0]
                else:
                    onward = [
                        (lid, pos)
                        for lid, pos in cands[i]
                        if graph.links[lid].frm == l_prev.to
                    ]
                    if onward:
                        pick = min(onward, key=lambda c: (c[1], c[0]))
            if pick is None:
                pick = cands[i][0] if len(cands[i]) == 1 else bootstrap(i)
            prev = pick
            script[frame] = (pick[0], 0, pick[1], bsm.speed_mps)
        scripts[sender] = script
    return scripts


def replay_feed(
    graph: RoadGraph,
    detections: list[Detection],
    traces: list[ReconstructedTrace],
    bsms: list[Bsm],
) -> dict:
    """Assemble the cosim HILS input: exact CV scripts plus reconstructed
    non-CV scripts, under one id space."""
    vehicles: dict[int, dict] = {}
    cv_scripts = map_match_bsms(graph, bsms)
    for sender in sorted(cv_scripts):
        vehicles[sender] = {"kind": "cv", "samples": cv_scripts[sender]}
    next_id = (max(vehicles) + 1) if vehicles else 0
    for trace in sorted(traces, key=lambda t: t.anon_id):
        samples = {}
        for frame, pos, speed in trace.samples:
            samples[frame] = (trace.link, 0, pos, speed)
        vehicles[next_id] = {"kind": "non_cv", "samples": samples}
        next_id += 1
    for entry in vehicles.values():
        for frame, (lid, lane, pos, speed) in entry["samples"].items():
            if lid not in graph.links:
                raise HilsError(f"script references unknown link {lid!r}")
    return {"vehicles": vehicles}


def reconcile_counts(
    lanes: int,
    loop_total: int | None,
    video_by_lane: dict[int, int] | None = None,
    mag_by_lane: dict[int, int] | None = None,
) -> dict[int, int]:
    """Per-lane counts with source precedence video > magnetometer > loop.

    Loops tied across lanes only give a movement total, which is split evenly
    (remainder to the lower lanes) when no per-lane source is available.
    """
    if video_by_lane is not None:
        return {ln: int(video_by_lane.get(ln, 0)) for ln in range(lanes)}
    if mag_by_lane is not None:
        return {ln: int(mag_by_lane.get(ln, 0)) for ln in range(lanes)}
    if loop_total is None:
        return {ln: 0 for ln in range(lanes)}
    base, rem = divmod(int(loop_total), lanes)
    return {ln: base + (1 if ln < rem else 0) for ln in range(lanes)}
