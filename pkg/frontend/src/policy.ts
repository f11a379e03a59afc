// Policy editor model: client-side validation mirrors the server's rules so
// obviously broken tables never cross the wire.

import { Policy } from "./protocol.js";

export function validatePolicy(policy: Policy): string[] {
  const problems: string[] = [];
  if (!(policy.fps_min > 0) || policy.fps_min > policy.fps_max) {
    problems.push(`need 0 < fps_min <= fps_max (got ${policy.fps_min}..${policy.fps_max})`);
  }
  if (policy.base_fps < policy.fps_min || policy.base_fps > policy.fps_max) {
    problems.push(`base_fps ${policy.base_fps} outside [${policy.fps_min}, ${policy.fps_max}]`);
  }
  const bounds = policy.thresholds.map(([b]) => b);
  for (let i = 1; i < bounds.length; i++) {
    if (bounds[i] <= bounds[i - 1]) {
      problems.push(`threshold bounds must be strictly increasing (row ${i + 1})`);
      break;
    }
  }
  const rates = policy.thresholds.map(([, f]) => f);
  for (let i = 1; i < rates.length; i++) {
    if (rates[i] < rates[i - 1]) {
      problems.push(`threshold fps must be non-decreasing (row ${i + 1})`);
      break;
    }
  }
  for (const f of rates) {
    if (f < policy.fps_min || f > policy.fps_max) {
      problems.push(`table fps ${f} outside [${policy.fps_min}, ${policy.fps_max}]`);
      break;
    }
  }
  if (policy.topk_fraction !== null && !(policy.topk_fraction > 0 && policy.topk_fraction < 1)) {
    problems.push(`topk_fraction must be in (0, 1), got ${policy.topk_fraction}`);
  }
  return problems;
}

/** Parse "0.01:4, 0.03:16" style threshold text into table rows. */
export function parseThresholds(text: string): [number, number][] {
  const rows: [number, number][] = [];
  for (const part of text.split(",")) {
    const trimmed = part.trim();
    if (!trimmed) continue;
    const [bound, fps] = trimmed.split(":").map(Number);
    if (!Number.isFinite(bound) || !Number.isFinite(fps)) {
      throw new Error(`cannot parse threshold row ${trimmed!}`);
    }
    rows.push([bound, fps]);
  }
  return rows;
}

export function formatThresholds(rows: [number, number][]): string {
  return rows.map(([b, f]) => `${b}:${f}`).join(", ");
}
