/** Map viewport: scenario lat/lon straight onto the canvas, no tile service.
 * Longitude is compressed by cos(latitude) so shapes keep their aspect. */

import type { ScenarioDoc } from "./types.js";

export interface Viewport {
  minLat: number;
  maxLat: number;
  minLon: number;
  maxLon: number;
  lonScale: number;
  width: number;
  height: number;
  pad: number;
}

export function fitViewport(
  scenario: ScenarioDoc,
  width: number,
  height: number,
  pad = 24,
): Viewport {
  const lats = scenario.nodes.map((n) => n.lat);
  const lons = scenario.nodes.map((n) => n.lon);
  const minLat = Math.min(...lats);
  const maxLat = Math.max(...lats);
  const minLon = Math.min(...lons);
  const maxLon = Math.max(...lons);
  const midLat = (minLat + maxLat) / 2;
  return {
    minLat,
    maxLat: maxLat === minLat ? minLat + 1e-6 : maxLat,
    minLon,
    maxLon: maxLon === minLon ? minLon + 1e-6 : maxLon,
    lonScale: Math.cos((midLat * Math.PI) / 180),
    width,
    height,
    pad,
  };
}

/** Project to canvas pixels (y grows downward; north is up). */
export function project(vp: Viewport, lat: number, lon: number): [number, number] {
  const spanLat = vp.maxLat - vp.minLat;
  const spanLon = (vp.maxLon - vp.minLon) * vp.lonScale;
  const usableW = vp.width - 2 * vp.pad;
  const usableH = vp.height - 2 * vp.pad;
  const scale = Math.min(usableW / spanLon, usableH / spanLat);
  const offX = (usableW - spanLon * scale) / 2;
  const offY = (usableH - spanLat * scale) / 2;
  const x = vp.pad + offX + (lon - vp.minLon) * vp.lonScale * scale;
  const y = vp.pad + offY + (vp.maxLat - lat) * scale;
  return [x, y];
}

/** Interpolate a vehicle's position along its link in pixel space. */
export function alongLink(
  vp: Viewport,
  a: { lat: number; lon: number },
  b: { lat: number; lon: number },
  fraction: number,
): [number, number] {
  const [x1, y1] = project(vp, a.lat, a.lon);
  const [x2, y2] = project(vp, b.lat, b.lon);
  return [x1 + fraction * (x2 - x1), y1 + fraction * (y2 - y1)];
}
