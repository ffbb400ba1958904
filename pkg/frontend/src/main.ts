/** TMC operator console: live network view + what-if steering.
 * All simulation state on screen comes from service snapshots; the only
 * mutation path is the command endpoint. */

import { CommandRejected, ControlClient, SnapshotFeed } from "./api.js";
import { toWire, validate, type CommandForm } from "./commands.js";
import { alignSeries, metricPoint, rangesDisjoint, summarize, type MetricPoint } from "./compare.js";
import { alongLink, fitViewport, project } from "./geo.js";
import { drawCompareChart, drawGauges, drawMap } from "./render.js";
import {
  applyEvent, attachSession, commandAcked, commandRejected, commandSubmitted,
  initialState, select, unresolvedCommands, type ViewState,
} from "./state.js";
import type { PlanDoc, ScenarioDoc, Snapshot } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let client = new ControlClient(location.hash.slice(1) || "http://127.0.0.1:8700");
let scenario: ScenarioDoc | null = null;
let plans: { mobility: PlanDoc; comm: PlanDoc } | null = null;
let planMode: "mobility" | "comm" = "mobility";
let state: ViewState = initialState();
let feed: SnapshotFeed | null = null;
let feedStatus = "idle";
const compareSeries = new Map<string, MetricPoint[]>();

function setState(next: ViewState): void {
  state = next;
  requestAnimationFrame(redraw);
}

function redraw(): void {
  const canvas = $<HTMLCanvasElement>("map");
  const ctx = canvas.getContext("2d");
  if (!ctx || !scenario) return;
  const vp = fitViewport(scenario, canvas.width, canvas.height);
  const plan = plans ? plans[planMode] : null;
  drawMap(ctx, vp, scenario, plan, state.latest, state.selection);
  const gaugeCanvas = $<HTMLCanvasElement>("gauges");
  const gctx = gaugeCanvas.getContext("2d");
  if (gctx) drawGauges(gctx, gaugeCanvas.width, state.latest);
  renderStatus();
  renderSelection();
  renderPending();
}

function renderStatus(): void {
  const snap = state.latest;
  $("status").textContent = [
    `service ${client.base}`,
    `session ${state.sessionId ?? "-"}`,
    `stream ${feedStatus}${state.gap ? " (gap)" : ""}`,
    snap
      ? `t=${snap.t.toFixed(1)}s frame=${snap.frame}${snap.paused ? " PAUSED" : ""}`
      : "no snapshot",
    snap ? `vehicles=${snap.vehicles.length} informed=${snap.informed_cvs}` : "",
    snap && snap.mean_travel_s != null ? `mean travel=${snap.mean_travel_s.toFixed(1)}s` : "",
    state.ended ? `ended (${state.endState})` : "",
  ]
    .filter(Boolean)
    .join("  |  ");
}

function renderSelection(): void {
  const box = $("selection");
  const sel = state.selection;
  if (!sel || !scenario) {
    box.textContent = "click a node, link, or vehicle";
    return;
  }
  if (sel.kind === "vehicle") {
    const v = state.latest?.vehicles.find((x) => x.id === sel.id);
    box.textContent = v
      ? `vehicle ${v.id} (${v.kind}${v.informed ? ", informed" : ""}) on ${v.link}` +
        ` lane ${v.lane} @ ${v.pos_m.toFixed(1)} m, ${v.speed_mps.toFixed(1)} m/s, P${v.partition}`
      : `vehicle ${sel.id}: not in latest snapshot`;
  } else if (sel.kind === "link") {
    const l = scenario.links.find((x) => x.id === sel.id);
    const closed = state.latest?.closures.some((c) => c.link === sel.id && c.active);
    box.textContent = l
      ? `link ${l.id}: ${l.from}->${l.to}, ${l.lanes} lane(s), ${l.density}, ` +
        `${(l.length_km * 1000).toFixed(0)} m @ ${l.speed_limit_mps} m/s` +
        (closed ? " [CLOSED]" : "")
      : String(sel.id);
  } else {
    const n = scenario.nodes.find((x) => x.id === sel.id);
    const signal = state.latest?.signals.find((s) => s.node === sel.id);
    box.textContent = n
      ? `node ${n.id}${n.signalized ? " (signalized)" : ""}` +
        (signal ? ` phase ${signal.phase}${signal.yellow ? " yellow" : ""}` : "") +
        (scenario.rsus.includes(n.id) ? " [RSU]" : "")
      : String(sel.id);
  }
}

function renderPending(): void {
  const list = $("pending");
  list.innerHTML = "";
  for (const p of state.pending.slice(-8)) {
    const line = document.createElement("div");
    const body = p.body as { kind?: string };
    if (p.status === "pending") line.textContent = `#${p.localId} ${body.kind}: pending`;
    else if (p.status === "acked")
      line.textContent = `#${p.localId} ${body.kind}: effect at t=${p.ack!.effect_t.toFixed(1)}s`;
    else line.textContent = `#${p.localId} ${body.kind}: rejected - ${p.error}`;
    line.className = `cmd ${p.status}`;
    list.appendChild(line);
  }
}

async function refreshSessions(): Promise<void> {
  const { sessions } = await client.sessions();
  const sel = $<HTMLSelectElement>("sessionPick");
  const current = sel.value;
  sel.innerHTML = "";
  for (const s of sessions) {
    const opt = document.createElement("option");
    opt.value = s.session_id;
    opt.textContent = `${s.session_id} (${s.state}, t=${(s.frame / 10).toFixed(0)}s)`;
    sel.appendChild(opt);
  }
  if (current) sel.value = current;
  for (const pick of ["compareA", "compareB"]) {
    const box = $<HTMLSelectElement>(pick);
    const val = box.value;
    box.innerHTML = sel.innerHTML;
    if (val) box.value = val;
  }
}

function connect(sid: string): void {
  feed?.stop();
  setState(attachSession(state, sid));
  compareSeries.set(sid, []);
  feed = new SnapshotFeed(client.base, sid, { every: 2, buffer: 256 });
  void feed.run(
    (ev, discontinuity) => {
      if (ev.type === "snapshot") {
        const series = compareSeries.get(sid);
        if (series) series.push(metricPoint(ev as Snapshot, watchedLinks()));
      }
      setState(applyEvent(state, ev, discontinuity));
    },
    (status) => {
      feedStatus = status;
      requestAnimationFrame(redraw);
    },
  );
}

function watchedLinks(): Set<string> {
  const snap = state.latest;
  const out = new Set<string>();
  if (snap) for (const c of snap.closures) out.add(c.link);
  if (state.selection?.kind === "link") out.add(String(state.selection.id));
  return out;
}

async function submitForm(form: CommandForm): Promise<void> {
  if (!scenario || !state.sessionId) return;
  const errors = validate(form, scenario);
  if (errors.length > 0) {
    $("formErrors").textContent = errors.join("; ");
    return;
  }
  $("formErrors").textContent = "";
  const body = toWire(form);
  const [next, localId] = commandSubmitted(state, body);
  setState(next);
  try {
    const ack = await client.sendCommand(state.sessionId, body);
    setState(commandAcked(state, localId, ack));
  } catch (err) {
    const reason = err instanceof CommandRejected ? err.reason : String(err);
    setState(commandRejected(state, localId, reason));
  }
}

function redrawCompare(): void {
  const aId = $<HTMLSelectElement>("compareA").value;
  const bId = $<HTMLSelectElement>("compareB").value;
  const a = compareSeries.get(aId) ?? [];
  const b = compareSeries.get(bId) ?? [];
  const warn = $("compareWarn");
  if (rangesDisjoint(a, b)) {
    warn.textContent = a.length && b.length ? "session time ranges are disjoint" : "";
  } else {
    warn.textContent = "";
  }
  const pairs = alignSeries(a, b);
  const charts: [string, (p: ReturnType<typeof alignSeries>[number]) => [number, number], string][] = [
    ["chartStopped", (p) => [p.a.stoppedOnWatched, p.b.stoppedOnWatched], "stopped vehicles on watched links"],
    ["chartInformed", (p) => [p.a.informedCvs, p.b.informedCvs], "informed CVs"],
    ["chartTravel", (p) => [p.a.meanTravelS ?? 0, p.b.meanTravelS ?? 0], "mean travel time (s)"],
  ];
  for (const [id, metric, label] of charts) {
    const canvas = $<HTMLCanvasElement>(id);
    const ctx = canvas.getContext("2d");
    if (ctx) drawCompareChart(ctx, canvas.width, canvas.height, pairs, metric, label);
  }
  const s = summarize(pairs);
  $("compareSummary").textContent =
    s.points === 0
      ? ""
      : `${s.points} aligned points; stopped-on-watched mean A=${s.meanStoppedWatchedA.toFixed(2)} ` +
        `B=${s.meanStoppedWatchedB.toFixed(2)}; informed A=${s.finalInformedA} B=${s.finalInformedB}`;
}

function hitTest(ev: MouseEvent): void {
  if (!scenario) return;
  const canvas = $<HTMLCanvasElement>("map");
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * canvas.width;
  const y = ((ev.clientY - rect.top) / rect.height) * canvas.height;
  const vp = fitViewport(scenario, canvas.width, canvas.height);
  let best: { sel: NonNullable<ViewState["selection"]>; d2: number } | null = null;
  const consider = (sel: NonNullable<ViewState["selection"]>, px: number, py: number, r: number) => {
    const d2 = (px - x) ** 2 + (py - y) ** 2;
    if (d2 <= r * r && (!best || d2 < best.d2)) best = { sel, d2 };
  };
  const nodeById = new Map(scenario.nodes.map((n) => [n.id, n]));
  for (const v of state.latest?.vehicles ?? []) {
    const link = scenario.links.find((l) => l.id === v.link);
    if (!link) continue;
    const a = nodeById.get(link.from)!;
    const b = nodeById.get(link.to)!;
    const [px, py] = alongLink(vp, a, b, Math.min(1, v.pos_m / (link.length_km * 1000)));
    consider({ kind: "vehicle", id: v.id }, px, py, 8);
  }
  for (const n of scenario.nodes) {
    const [px, py] = project(vp, n.lat, n.lon);
    consider({ kind: "node", id: n.id }, px, py, 10);
  }
  if (!best) {
    for (const l of scenario.links) {
      const a = nodeById.get(l.from)!;
      const b = nodeById.get(l.to)!;
      const [mx, my] = alongLink(vp, a, b, 0.5);
      consider({ kind: "link", id: l.id }, mx, my, 14);
    }
  }
  const found = best as { sel: NonNullable<ViewState["selection"]>; d2: number } | null;
  setState(select(state, found ? found.sel : null));
}

async function boot(): Promise<void> {
  $<HTMLInputElement>("serviceUrl").value = client.base;
  $("connectService").onclick = async () => {
    client = new ControlClient($<HTMLInputElement>("serviceUrl").value);
    scenario = await client.scenario();
    plans = await client.plans();
    await refreshSessions();
    redraw();
  };
  $("newSession").onclick = async () => {
    await client.createSession({});
    await refreshSessions();
  };
  $("startSession").onclick = async () => {
    const sid = $<HTMLSelectElement>("sessionPick").value;
    if (sid) {
      await client.start(sid).catch(() => {});
      connect(sid);
    }
  };
  $("stopSession").onclick = async () => {
    const sid = $<HTMLSelectElement>("sessionPick").value;
    if (sid) await client.stop(sid);
    await refreshSessions();
  };
  $("watchSession").onclick = () => {
    const sid = $<HTMLSelectElement>("sessionPick").value;
    if (sid) connect(sid);
  };
  $("planMode").onclick = () => {
    planMode = planMode === "mobility" ? "comm" : "mobility";
    $("planMode").textContent = `partitions: ${planMode}`;
    redraw();
  };
  $<HTMLCanvasElement>("map").onclick = hitTest;

  $("sendClose").onclick = () =>
    submitForm({
      kind: "close_lanes",
      link: $<HTMLInputElement>("closeLink").value ||
        (state.selection?.kind === "link" ? String(state.selection.id) : ""),
      lanes: $<HTMLInputElement>("closeLanes").value || "all",
      fromS: $<HTMLInputElement>("closeFrom").value,
      toS: $<HTMLInputElement>("closeTo").value,
    });
  $("sendAdvisory").onclick = () =>
    submitForm({
      kind: "inject_advisory",
      id: $<HTMLInputElement>("advId").value,
      rsu: $<HTMLInputElement>("advRsu").value,
      links: $<HTMLInputElement>("advLinks").value.split(",").map((s) => s.trim()).filter(Boolean),
      advisoryKind: "detour",
      validFromS: $<HTMLInputElement>("advFrom").value,
      validToS: $<HTMLInputElement>("advTo").value,
    });
  $("sendPenetration").onclick = () =>
    submitForm({ kind: "set_penetration", rate: $<HTMLInputElement>("penRate").value });
  $("sendPause").onclick = () => submitForm({ kind: "pause" });
  $("sendResume").onclick = () => submitForm({ kind: "resume" });
  $("redrawCompare").onclick = redrawCompare;

  setInterval(() => {
    void refreshSessions().catch(() => {});
    if (unresolvedCommands(state).length > 0) renderPending();
  }, 2000);
}

boot().catch((err) => {
  document.body.insertAdjacentText("beforeend", `console failed to start: ${err}`);
});
