/** Canvas rendering. The pure style helpers are exported for tests; the
 * draw* functions only read state and paint. */

import { alongLink, project, type Viewport } from "./geo.js";
import type { ComparePair } from "./compare.js";
import type {
  PlanDoc, ScenarioDoc, Snapshot, SnapshotVehicle,
} from "./types.js";

export const DENSITY_COLORS: Record<string, string> = {
  low: "#7aa37a",
  medium: "#d4a94c",
  high: "#c3573f",
};

const PARTITION_PALETTE = [
  "#4c6fb1", "#b14c92", "#4cb19b", "#b1884c", "#7a4cb1", "#4ca3b1", "#b14c4c", "#86b14c",
];

export function partitionColor(index: number): string {
  return PARTITION_PALETTE[index % PARTITION_PALETTE.length]!;
}

export function linkStroke(
  density: string,
  closed: boolean,
): { color: string; width: number; dash: number[] } {
  if (closed) return { color: "#e04636", width: 5, dash: [7, 4] };
  return { color: DENSITY_COLORS[density] ?? "#888", width: 3, dash: [] };
}

/** CV vs non-CV differ by color and shape; reconstructed (projected) bodies
 * render hollow, measured ones solid. */
export function vehicleGlyph(
  kind: "cv" | "non_cv",
  informed: boolean,
  measured = true,
): { shape: "circle" | "square"; color: string; fill: boolean; radius: number } {
  if (kind === "cv") {
    return {
      shape: "circle",
      color: informed ? "#ffd23c" : "#3ca4ff",
      fill: measured,
      radius: informed ? 5 : 4,
    };
  }
  return { shape: "square", color: "#d8d8d8", fill: measured, radius: 3.5 };
}

export function activeClosedLinks(snap: Snapshot | null): Set<string> {
  const out = new Set<string>();
  if (!snap) return out;
  for (const c of snap.closures) {
    if (c.active) out.add(c.link);
  }
  return out;
}

export function gaugeFractions(
  partitions: { partition: number; vehicles: number }[],
): { partition: number; fraction: number; vehicles: number }[] {
  const max = Math.max(1, ...partitions.map((p) => p.vehicles));
  return partitions.map((p) => ({
    partition: p.partition,
    vehicles: p.vehicles,
    fraction: p.vehicles / max,
  }));
}

export function drawMap(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  scenario: ScenarioDoc,
  plan: PlanDoc | null,
  snap: Snapshot | null,
  selection: { kind: string; id: string | number } | null,
  hilsMode = false,
): void {
  ctx.clearRect(0, 0, vp.width, vp.height);
  const nodeById = new Map(scenario.nodes.map((n) => [n.id, n]));
  const closed = activeClosedLinks(snap);

  for (const link of scenario.links) {
    const a = nodeById.get(link.from);
    const b = nodeById.get(link.to);
    if (!a || !b) continue;
    const style = linkStroke(link.density, closed.has(link.id));
    ctx.strokeStyle = style.color;
    ctx.lineWidth =
      selection?.kind === "link" && selection.id === link.id ? style.width + 3 : style.width;
    ctx.setLineDash(style.dash);
    ctx.beginPath();
    ctx.moveTo(...project(vp, a.lat, a.lon));
    ctx.lineTo(...project(vp, b.lat, b.lon));
    ctx.stroke();
  }
  ctx.setLineDash([]);

  for (const node of scenario.nodes) {
    const [x, y] = project(vp, node.lat, node.lon);
    const part = plan?.assignment[node.id];
    ctx.fillStyle = part !== undefined ? partitionColor(part) : "#666";
    ctx.beginPath();
    ctx.arc(x, y, node.signalized ? 7 : 5, 0, 2 * Math.PI);
    ctx.fill();
    if (node.signalized) {
      ctx.strokeStyle = "#222";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
    if (scenario.rsus.includes(node.id)) {
      ctx.strokeStyle = "#ffd23c";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.arc(x, y, 11, 0, 2 * Math.PI);
      ctx.stroke();
    }
    if (selection?.kind === "node" && selection.id === node.id) {
      ctx.strokeStyle = "#fff";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(x, y, 10, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  if (snap) {
    for (const v of snap.vehicles) {
      drawVehicle(ctx, vp, scenario, nodeById, v, hilsMode, selection);
    }
  }
}

function drawVehicle(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  scenario: ScenarioDoc,
  nodeById: Map<string, { lat: number; lon: number }>,
  v: SnapshotVehicle,
  hilsMode: boolean,
  selection: { kind: string; id: string | number } | null,
): void {
  const link = scenario.links.find((l) => l.id === v.link);
  if (!link) return;
  const a = nodeById.get(link.from);
  const b = nodeById.get(link.to);
  if (!a || !b) return;
  const frac = Math.min(1, v.pos_m / (link.length_km * 1000));
  const [x, y] = alongLink(vp, a, b, frac);
  // in replay mode non-CV bodies are reconstructions: hollow glyphs
  const measured = hilsMode ? v.kind === "cv" : true;
  const glyph = vehicleGlyph(v.kind, v.informed, measured);
  ctx.beginPath();
  if (glyph.shape === "circle") {
    ctx.arc(x, y, glyph.radius, 0, 2 * Math.PI);
  } else {
    ctx.rect(x - glyph.radius, y - glyph.radius, glyph.radius * 2, glyph.radius * 2);
  }
  if (glyph.fill) {
    ctx.fillStyle = glyph.color;
    ctx.fill();
  } else {
    ctx.strokeStyle = glyph.color;
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
  if (selection?.kind === "vehicle" && selection.id === v.id) {
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.arc(x, y, glyph.radius + 4, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

export function drawGauges(
  ctx: CanvasRenderingContext2D,
  width: number,
  snap: Snapshot | null,
): void {
  ctx.clearRect(0, 0, width, 200);
  if (!snap) return;
  const rows = gaugeFractions(snap.partitions);
  ctx.font = "12px system-ui, sans-serif";
  rows.forEach((row, i) => {
    const y = 8 + i * 22;
    ctx.fillStyle = "#333";
    ctx.fillRect(58, y, width - 100, 14);
    ctx.fillStyle = partitionColor(row.partition);
    ctx.fillRect(58, y, (width - 100) * row.fraction, 14);
    ctx.fillStyle = "#ddd";
    ctx.fillText(`P${row.partition}`, 8, y + 11);
    ctx.fillText(String(row.vehicles), width - 36, y + 11);
  });
}

export function drawCompareChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  pairs: ComparePair[],
  metric: (p: ComparePair) => [number, number],
  label: string,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.font = "11px system-ui, sans-serif";
  ctx.fillStyle = "#aaa";
  ctx.fillText(label, 6, 12);
  if (pairs.length < 2) return;
  const values = pairs.flatMap((p) => metric(p));
  const vMax = Math.max(1e-9, ...values);
  const t0 = pairs[0]!.t;
  const t1 = pairs[pairs.length - 1]!.t;
  const px = (t: number) => 6 + ((t - t0) / Math.max(1e-9, t1 - t0)) * (width - 12);
  const py = (v: number) => height - 6 - (v / vMax) * (height - 26);
  const colors = ["#3ca4ff", "#e0703c"];
  for (const series of [0, 1] as const) {
    ctx.strokeStyle = colors[series]!;
    ctx.lineWidth = 1.6;
    ctx.beginPath();
    pairs.forEach((p, i) => {
      const v = metric(p)[series];
      if (i === 0) ctx.moveTo(px(p.t), py(v));
      else ctx.lineTo(px(p.t), py(v));
    });
    ctx.stroke();
  }
}
