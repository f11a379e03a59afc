// Client session: protocol bookkeeping the UI renders from.
//
// All run-state authority lives server-side; this object only keeps render
// history (bounded snapshot ring, chart series) and correlates control
// acknowledgements. Snapshots are rendered strictly in seq order within a
// connection, and chart series never gain duplicate batch points across
// reconnects.

import {
  ClientType,
  Envelope,
  Policy,
  SnapshotPayload,
  decodeServerMessage,
  encodeClientMessage,
} from "./protocol.js";
import { Transport } from "./transport.js";

export const SNAPSHOT_RING_DEPTH = 32;

export interface SeriesPoint {
  batch: number;
  value: number;
}

export interface Ack {
  command: string;
  ok: boolean;
  reason: string;
}

export type SessionState = "idle" | "connected" | "ended" | "disconnected";

interface Handlers {
  onHello?: (payload: Record<string, unknown>) => void;
  onFirstFrame?: (payload: Record<string, unknown>) => void;
  onSnapshot?: (payload: SnapshotPayload) => void;
  onEnded?: (status: string) => void;
  onDisconnect?: () => void;
  onAck?: (ack: Ack) => void;
}

export class ClientSession {
  state: SessionState = "idle";
  hello: Record<string, unknown> | null = null;
  runStatus: string | null = null;
  snapshots: SnapshotPayload[] = []; // ring, newest last
  maxStrain: SeriesPoint[] = [];
  meanStrain: SeriesPoint[] = [];
  fpsTrace: SeriesPoint[] = [];

  private transport: Transport | null = null;
  private outSeq = 0;
  private lastRenderedSeq = -1;
  private lastChartedBatch = -1;
  private pendingAcks: { command: string; resolve: (ack: Ack) => void }[] = [];
  private handlers: Handlers;

  constructor(handlers: Handlers = {}) {
    this.handlers = handlers;
  }

  /** Wire a (new) transport; chart history survives reconnects. */
  attach(transport: Transport): void {
    this.transport = transport;
    this.outSeq = 0; // seq is per direction per connection
    this.lastRenderedSeq = -1;
    this.state = "connected";
    transport.onMessage((text) => this.handleMessage(text));
    transport.onClose(() => {
      if (this.state !== "ended") this.state = "disconnected";
      this.handlers.onDisconnect?.();
    });
  }

  private send(type: ClientType, payload: unknown): void {
    if (!this.transport) throw new Error("no transport attached");
    this.transport.send(encodeClientMessage(type, this.outSeq, payload));
    this.outSeq += 1;
  }

  subscribe(): Promise<Ack> {
    return this.sendControl("SUBSCRIBE", {});
  }

  setRoi(rect: [number, number, number, number]): Promise<Ack> {
    return this.sendControl("SET_ROI", { rect });
  }

  setPolicy(policy: Policy): Promise<Ack> {
    return this.sendControl("SET_POLICY", { policy });
  }

  stop(): Promise<Ack> {
    return this.sendControl("STOP", {});
  }

  private sendControl(type: ClientType, payload: unknown): Promise<Ack> {
    this.send(type, payload);
    return new Promise((resolve) => {
      this.pendingAcks.push({ command: type, resolve });
    });
  }

  private handleMessage(text: string): void {
    let env: Envelope;
    try {
      env = decodeServerMessage(text);
    } catch {
      return; // ignore malformed input; the server is the authority
    }
    switch (env.type) {
      case "HELLO":
        this.hello = env.payload;
        this.handlers.onHello?.(env.payload);
        break;
      case "FIRST_FRAME":
        this.handlers.onFirstFrame?.(env.payload);
        break;
      case "BATCH_SNAPSHOT": {
        if (env.seq <= this.lastRenderedSeq) return; // never render backwards
        this.lastRenderedSeq = env.seq;
        const snap = env.payload as unknown as SnapshotPayload;
        this.snapshots.push(snap);
        if (this.snapshots.length > SNAPSHOT_RING_DEPTH) this.snapshots.shift();
        if (snap.batch_index > this.lastChartedBatch) {
          this.lastChartedBatch = snap.batch_index;
          if (snap.stats) {
            this.maxStrain.push({ batch: snap.batch_index, value: snap.stats.max_eyy });
            this.meanStrain.push({ batch: snap.batch_index, value: snap.stats.mean_eyy });
          }
          this.fpsTrace.push({ batch: snap.batch_index, value: snap.fps_used });
        }
        this.handlers.onSnapshot?.(snap);
        break;
      }
      case "RATE_TRACE": {
        // catch-up after (re)subscribe: backfill fps points we missed
        const trace = env.payload.trace as [number, number][];
        for (const [batch, fps] of trace) {
          if (!this.fpsTrace.some((p) => p.batch === batch)) {
            this.fpsTrace.push({ batch, value: fps });
          }
        }
        this.fpsTrace.sort((a, b) => a.batch - b.batch);
        break;
      }
      case "RUN_ENDED":
        this.state = "ended";
        this.runStatus = String(env.payload.status);
        this.handlers.onEnded?.(this.runStatus);
        break;
      case "CONTROL_ACK": {
        const ack = env.payload as unknown as Ack;
        const idx = this.pendingAcks.findIndex((p) => p.command === ack.command);
        if (idx >= 0) {
          const [pending] = this.pendingAcks.splice(idx, 1);
          pending.resolve(ack);
        }
        this.handlers.onAck?.(ack);
        break;
      }
    }
  }
}
