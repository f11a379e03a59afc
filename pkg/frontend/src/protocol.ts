// Wire protocol: JSON envelopes {type, seq, payload}. Over WebSocket each
// envelope is one text frame; over raw TCP it is prefixed with a 4-byte
// little-endian length. Raster payloads are base64 of little-endian f32 (or
// u8) bytes plus dims.

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const rasterSchema = z.object({
  dims: z.tuple([z.number().int().nonnegative(), z.number().int().nonnegative()]),
  dtype: z.enum(["f32le", "u8"]),
  data: z.string(),
});

export const statsSchema = z.object({
  max_eyy: z.number(),
  mean_eyy: z.number(),
  del_max_eyy: z.number(),
  topk_mean_eyy: z.record(z.string(), z.number()),
  del_topk_eyy: z.record(z.string(), z.number()),
  valid_pixel_count: z.number().int(),
  component: z.string().optional(),
});

export const policySchema = z.object({
  metric: z.enum(["max_strain", "del_max_strain", "constant"]),
  thresholds: z.array(z.tuple([z.number(), z.number()])),
  base_fps: z.number().positive(),
  fps_min: z.number().positive(),
  fps_max: z.number().positive(),
  topk_fraction: z.number().nullable(),
});

const serverPayloads = {
  HELLO: z.object({
    protocol_version: z.number().int(),
    run_id: z.string(),
    state: z.string(),
  }),
  FIRST_FRAME: z.object({
    png: z.string(),
    width: z.number().int(),
    height: z.number().int(),
    timestamp: z.number().optional(),
  }),
  BATCH_SNAPSHOT: z.object({
    batch_index: z.number().int(),
    fps_used: z.number(),
    next_fps: z.number(),
    fired_row: z.number().int().nullable().optional(),
    flagged: z.boolean().optional(),
    stats: statsSchema.nullable(),
    eyy: rasterSchema.nullable(),
    valid: rasterSchema.nullable(),
    roi: z.array(z.number().int()).length(4).nullable().optional(),
  }),
  RATE_TRACE: z.object({ trace: z.array(z.tuple([z.number().int(), z.number()])) }),
  RUN_ENDED: z.object({ status: z.string() }),
  CONTROL_ACK: z.object({ command: z.string(), ok: z.boolean(), reason: z.string() }),
};

const clientPayloads = {
  SUBSCRIBE: z.object({}).strict(),
  SET_ROI: z.object({ rect: z.tuple([z.number().int(), z.number().int(), z.number().int(), z.number().int()]) }),
  SET_POLICY: z.object({ policy: policySchema }),
  STOP: z.object({}).strict(),
};

export type ServerType = keyof typeof serverPayloads;
export type ClientType = keyof typeof clientPayloads;

export interface Envelope {
  type: string;
  seq: number;
  payload: Record<string, unknown>;
}

const envelopeSchema = z.object({
  type: z.string(),
  seq: z.number().int().nonnegative(),
  payload: z.record(z.string(), z.unknown()),
});

export function decodeServerMessage(text: string): Envelope {
  const env = envelopeSchema.parse(JSON.parse(text));
  const schema = serverPayloads[env.type as ServerType];
  if (!schema) throw new Error(`unknown server message type ${env.type}`);
  schema.parse(env.payload);
  return env as Envelope;
}

export function encodeClientMessage(type: ClientType, seq: number, payload: unknown): string {
  // every outgoing message is validated against the grammar before it
  // leaves the client; an invalid message is a bug, not a request
  clientPayloads[type].parse(payload);
  if (!Number.isInteger(seq) || seq < 0) throw new Error(`bad seq ${seq}`);
  return JSON.stringify({ type, seq, payload });
}

export function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const raw = atob(data);
    const out = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(data, "base64"));
}

export interface DecodedRaster {
  width: number;
  height: number;
  values: Float32Array | Uint8Array;
}

export function decodeRaster(raster: z.infer<typeof rasterSchema>): DecodedRaster {
  const [h, w] = raster.dims;
  const bytes = decodeBase64(raster.data);
  const itemSize = raster.dtype === "f32le" ? 4 : 1;
  if (bytes.byteLength !== h * w * itemSize) {
    throw new Error(`raster byte length ${bytes.byteLength} != ${h}x${w}*${itemSize}`);
  }
  const values =
    raster.dtype === "f32le"
      ? new Float32Array(bytes.buffer, bytes.byteOffset, h * w)
      : bytes;
  return { width: w, height: h, values };
}

export type Policy = z.infer<typeof policySchema>;
export type Stats = z.infer<typeof statsSchema>;
export type SnapshotPayload = z.infer<(typeof serverPayloads)["BATCH_SNAPSHOT"]>;
