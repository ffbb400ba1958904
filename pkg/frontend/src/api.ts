/** HTTP client for the control service plus the NDJSON snapshot stream.
 * The command endpoint is the console's only mutation path. */

import type {
  Ack, CommandBody, PlanDoc, ScenarioDoc, SessionInfo, StreamEvent,
} from "./types.js";

export class CommandRejected extends Error {
  constructor(public reason: string) {
    super(reason);
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new CommandRejected(String(body.error ?? `HTTP ${resp.status}`));
  }
  return body;
}

export class ControlClient {
  constructor(public base: string) {
    this.base = base.replace(/\/$/, "");
  }

  scenario(): Promise<ScenarioDoc> {
    return fetch(`${this.base}/scenario`).then(jsonOrThrow);
  }

  plans(): Promise<{ mobility: PlanDoc; comm: PlanDoc }> {
    return fetch(`${this.base}/plans`).then(jsonOrThrow);
  }

  sessions(): Promise<{ sessions: SessionInfo[] }> {
    return fetch(`${this.base}/sessions`).then(jsonOrThrow);
  }

  createSession(overrides: Record<string, unknown> = {}): Promise<{ session_id: string }> {
    return fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(overrides),
    }).then(jsonOrThrow);
  }

  start(sid: string): Promise<{ state: string }> {
    return fetch(`${this.base}/sessions/${sid}/start`, { method: "POST" }).then(jsonOrThrow);
  }

  stop(sid: string): Promise<{ state: string; digest: string | null }> {
    return fetch(`${this.base}/sessions/${sid}/stop`, { method: "POST" }).then(jsonOrThrow);
  }

  record(sid: string): Promise<Record<string, unknown>> {
    return fetch(`${this.base}/sessions/${sid}/record`).then(jsonOrThrow);
  }

  /** Post a command; resolves with the ack (carrying the exact effect frame)
   * or rejects with the service's verbatim rejection reason. */
  sendCommand(sid: string, body: CommandBody): Promise<Ack> {
    return fetch(`${this.base}/sessions/${sid}/commands`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }).then(jsonOrThrow);
  }
}

/** Split a byte stream into newline-delimited JSON values. Handles lines
 * broken across chunks; bad lines are skipped (the stream keeps going). */
export async function* ndjsonEvents(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<StreamEvent> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let idx;
      while ((idx = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, idx).trim();
        buffer = buffer.slice(idx + 1);
        if (!line) continue;
        try {
          yield JSON.parse(line) as StreamEvent;
        } catch {
          // partial or corrupt line: drop it, the feed continues
        }
      }
    }
    const tail = buffer.trim();
    if (tail) {
      try {
        yield JSON.parse(tail) as StreamEvent;
      } catch {
        /* ignore */
      }
    }
  } finally {
    reader.releaseLock();
  }
}

export interface FeedOptions {
  every?: number;
  buffer?: number;
  /** wall-clock ms between reconnect attempts */
  retryMs?: number;
  /** stop after this many consecutive failed connects (0 = forever) */
  maxRetries?: number;
}

export type FeedStatus = "connecting" | "live" | "reconnecting" | "ended";

/** Auto-reconnecting snapshot subscription. A reconnect is reported as a
 * discontinuity so the view can show the gap indicator. */
export class SnapshotFeed {
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private base: string,
    private sid: string,
    private opts: FeedOptions = {},
  ) {}

  async run(
    onEvent: (ev: StreamEvent, discontinuity: boolean) => void,
    onStatus: (status: FeedStatus) => void = () => {},
  ): Promise<void> {
    const every = this.opts.every ?? 1;
    const buffer = this.opts.buffer ?? 32;
    const retryMs = this.opts.retryMs ?? 1000;
    let attempts = 0;
    let hadConnection = false;
    while (!this.stopped) {
      onStatus(hadConnection ? "reconnecting" : "connecting");
      this.controller = new AbortController();
      try {
        const resp = await fetch(
          `${this.base}/sessions/${this.sid}/stream?every=${every}&buffer=${buffer}`,
          { signal: this.controller.signal },
        );
        if (!resp.ok || !resp.body) throw new Error(`HTTP ${resp.status}`);
        onStatus("live");
        let discontinuity = hadConnection; // a reconnect implies a possible gap
        hadConnection = true;
        attempts = 0;
        for await (const ev of ndjsonEvents(resp.body)) {
          onEvent(ev, discontinuity);
          discontinuity = false;
          if (ev.type === "end") {
            onStatus("ended");
            return;
          }
        }
      } catch (err) {
        if (this.stopped) break;
        attempts += 1;
        const max = this.opts.maxRetries ?? 0;
        if (max > 0 && attempts >= max) {
          onStatus("ended");
          throw err;
        }
        await new Promise((r) => setTimeout(r, retryMs));
      }
    }
    onStatus("ended");
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }
}
