/** Console view state. The console performs no simulation of its own: every
 * field here is either scenario context, a verbatim snapshot, or command
 * bookkeeping. Rendered simulation time never moves backwards within a
 * session; out-of-order events are dropped. */

import type { Ack, Snapshot, StreamEvent } from "./types.js";

export type Selection =
  | { kind: "link"; id: string }
  | { kind: "node"; id: string }
  | { kind: "vehicle"; id: number };

export interface PendingCommand {
  localId: number;
  body: unknown;
  status: "pending" | "acked" | "rejected";
  ack?: Ack;
  error?: string;
}

export interface ViewState {
  sessionId: string | null;
  latest: Snapshot | null;
  lastT: number;
  gap: boolean;
  ended: boolean;
  endState: string | null;
  selection: Selection | null;
  pending: PendingCommand[];
  nextLocalId: number;
  droppedOutOfOrder: number;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    latest: null,
    lastT: -1,
    gap: false,
    ended: false,
    endState: null,
    selection: null,
    pending: [],
    nextLocalId: 1,
    droppedOutOfOrder: 0,
  };
}

export function attachSession(state: ViewState, sessionId: string): ViewState {
  // switching sessions resets the monotonic-time guard
  return { ...initialState(), selection: state.selection, sessionId };
}

/** Apply one stream event. Snapshots older than what is already rendered are
 * ignored so the rendered t never decreases within a session. */
export function applyEvent(
  state: ViewState,
  ev: StreamEvent,
  discontinuity = false,
): ViewState {
  if (ev.type === "end") {
    return { ...state, ended: true, endState: ev.state ?? null };
  }
  if (ev.type === "keepalive") {
    return state;
  }
  if (state.sessionId !== null && ev.session !== state.sessionId) {
    return state;
  }
  if (ev.t < state.lastT) {
    return { ...state, droppedOutOfOrder: state.droppedOutOfOrder + 1 };
  }
  return {
    ...state,
    latest: ev,
    lastT: ev.t,
    gap: Boolean(ev.gap) || discontinuity,
  };
}

export function select(state: ViewState, selection: Selection | null): ViewState {
  return { ...state, selection };
}

export function commandSubmitted(state: ViewState, body: unknown): [ViewState, number] {
  const localId = state.nextLocalId;
  const pending: PendingCommand = { localId, body, status: "pending" };
  return [
    { ...state, pending: [...state.pending, pending], nextLocalId: localId + 1 },
    localId,
  ];
}

export function commandAcked(state: ViewState, localId: number, ack: Ack): ViewState {
  return {
    ...state,
    pending: state.pending.map((p) =>
      p.localId === localId ? { ...p, status: "acked", ack } : p,
    ),
  };
}

export function commandRejected(state: ViewState, localId: number, error: string): ViewState {
  return {
    ...state,
    pending: state.pending.map((p) =>
      p.localId === localId ? { ...p, status: "rejected", error } : p,
    ),
  };
}

export function unresolvedCommands(state: ViewState): PendingCommand[] {
  return state.pending.filter((p) => p.status === "pending");
}
