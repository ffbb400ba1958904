/** Side-by-side session comparison: synchronized-time metric series derived
 * purely from snapshot fields (no client-side simulation). */

import type { Snapshot } from "./types.js";

export const STOPPED_SPEED_MPS = 0.5;

export interface MetricPoint {
  t: number;
  stopped: number;
  stoppedOnWatched: number;
  informedCvs: number;
  arrivals: number;
  meanTravelS: number | null;
  vehicles: number;
}

export function metricPoint(snap: Snapshot, watchedLinks: Set<string>): MetricPoint {
  let stopped = 0;
  let stoppedOnWatched = 0;
  for (const v of snap.vehicles) {
    if (v.speed_mps < STOPPED_SPEED_MPS) {
      stopped += 1;
      if (watchedLinks.has(v.link)) stoppedOnWatched += 1;
    }
  }
  return {
    t: snap.t,
    stopped,
    stoppedOnWatched,
    informedCvs: snap.informed_cvs,
    arrivals: snap.counters["arrivals"] ?? 0,
    meanTravelS: snap.mean_travel_s,
    vehicles: snap.vehicles.length,
  };
}

export interface ComparePair {
  t: number;
  a: MetricPoint;
  b: MetricPoint;
}

/** Inner-join two series on simulation time. */
export function alignSeries(a: MetricPoint[], b: MetricPoint[]): ComparePair[] {
  const byT = new Map(b.map((p) => [p.t.toFixed(1), p]));
  const out: ComparePair[] = [];
  for (const pa of a) {
    const pb = byT.get(pa.t.toFixed(1));
    if (pb) out.push({ t: pa.t, a: pa, b: pb });
  }
  return out;
}

export interface CompareSummary {
  points: number;
  tRange: [number, number] | null;
  meanStoppedWatchedA: number;
  meanStoppedWatchedB: number;
  finalInformedA: number;
  finalInformedB: number;
  finalMeanTravelA: number | null;
  finalMeanTravelB: number | null;
}

export function summarize(pairs: ComparePair[]): CompareSummary {
  if (pairs.length === 0) {
    return {
      points: 0,
      tRange: null,
      meanStoppedWatchedA: 0,
      meanStoppedWatchedB: 0,
      finalInformedA: 0,
      finalInformedB: 0,
      finalMeanTravelA: null,
      finalMeanTravelB: null,
    };
  }
  const mean = (xs: number[]) => xs.reduce((s, x) => s + x, 0) / xs.length;
  const last = pairs[pairs.length - 1]!;
  return {
    points: pairs.length,
    tRange: [pairs[0]!.t, last.t],
    meanStoppedWatchedA: mean(pairs.map((p) => p.a.stoppedOnWatched)),
    meanStoppedWatchedB: mean(pairs.map((p) => p.b.stoppedOnWatched)),
    finalInformedA: last.a.informedCvs,
    finalInformedB: last.b.informedCvs,
    finalMeanTravelA: last.a.meanTravelS,
    finalMeanTravelB: last.b.meanTravelS,
  };
}

/** Disjoint time ranges make a comparison meaningless; warn, don't guess. */
export function rangesDisjoint(a: MetricPoint[], b: MetricPoint[]): boolean {
  if (a.length === 0 || b.length === 0) return true;
  const aMin = a[0]!.t;
  const aMax = a[a.length - 1]!.t;
  const bMin = b[0]!.t;
  const bMax = b[b.length - 1]!.t;
  return aMax < bMin || bMax < aMin;
}
