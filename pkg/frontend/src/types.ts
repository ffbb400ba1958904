/** Wire types for the control service. These mirror the service JSON exactly;
 * every rendered value in the console traces back to one of these fields. */

export interface ScenarioNode {
  id: string;
  lat: number;
  lon: number;
  signalized: boolean;
  in_lanes: number;
  out_lanes: number;
}

export interface ScenarioLink {
  id: string;
  from: string;
  to: string;
  lanes: number;
  density: "low" | "medium" | "high";
  speed_limit_mps: number;
  length_km: number;
}

export interface ScenarioDoc {
  name: string;
  nodes: ScenarioNode[];
  links: ScenarioLink[];
  demand: { penetration: number; flows: unknown[] };
  signals: { node: string; offset_s: number; phases: unknown[] }[];
  rsus: string[];
  advisories: unknown[];
  closures: unknown[];
}

export interface PlanDoc {
  mode: "mobility" | "comm";
  k: number;
  assignment: Record<string, number>;
  metrics?: { edge_cut: number; boundary_nodes: number; imbalance: number };
}

export interface SnapshotVehicle {
  id: number;
  kind: "cv" | "non_cv";
  link: string;
  lane: number;
  pos_m: number;
  speed_mps: number;
  partition: number;
  informed: boolean;
}

export interface SnapshotClosure {
  link: string;
  lanes: "all" | number[];
  from_s: number;
  to_s: number;
  active: boolean;
}

export interface Snapshot {
  type: "snapshot";
  session: string;
  frame: number;
  t: number;
  paused: boolean;
  gap?: boolean;
  catchup?: boolean;
  vehicles: SnapshotVehicle[];
  partitions: { partition: number; vehicles: number }[];
  signals: { node: string; phase: number; yellow: boolean; remaining_s: number }[];
  closures: SnapshotClosure[];
  counters: Record<string, number>;
  informed_cvs: number;
  mean_travel_s: number | null;
  commands_applied: number;
}

export interface StreamEnd {
  type: "end";
  state?: string;
}

export interface StreamKeepalive {
  type: "keepalive";
  t: number;
}

export type StreamEvent = Snapshot | StreamEnd | StreamKeepalive;

export interface Ack {
  accepted: boolean;
  command_id: number;
  effect_frame: number;
  effect_t: number;
}

export interface SessionInfo {
  session_id: string;
  state: "created" | "running" | "finished" | "error";
  frame: number;
  duration_s: number;
}

/** Command bodies: must serialize to exactly what the control module accepts. */
export type CommandBody =
  | { kind: "close_lanes"; link: string; lanes: "all" | number[]; from_s: number; to_s: number }
  | { kind: "retime_signal"; node: string; offset_s: number;
      phases: { approaches: string[]; green_s: number; yellow_s: number }[] }
  | { kind: "inject_advisory"; id: string; rsu: string; links: string[];
      advisory_kind: "detour" | "lane_closure"; valid_from_s: number; valid_to_s: number }
  | { kind: "set_penetration"; rate: number }
  | { kind: "pause" }
  | { kind: "resume" }
  | { kind: "set_rate"; rate: number | null };
