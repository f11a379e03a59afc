import { describe, expect, it } from "vitest";

import { DEFAULT_SCALE, INVALID_RGB, divergingColor, renderHeatmap } from "../src/heatmap.js";
import { formatThresholds, parseThresholds, validatePolicy } from "../src/policy.js";
import { dragToRect, snapRectToMargin } from "../src/roi.js";

describe("ROI geometry", () => {
  it("normalizes drags in any direction", () => {
    expect(dragToRect(50, 60, 10, 20)).toEqual({ x0: 10, y0: 20, width: 40, height: 40 });
  });

  it("keeps interior rects untouched", () => {
    const { rect, adjusted } = snapRectToMargin({ x0: 20, y0: 20, width: 40, height: 40 }, 128, 128, 4);
    expect(adjusted).toBe(false);
    expect(rect).toEqual({ x0: 20, y0: 20, width: 40, height: 40 });
  });

  it("snaps border-touching rects inward and reports it", () => {
    const { rect, adjusted } = snapRectToMargin({ x0: 0, y0: 0, width: 128, height: 128 }, 128, 128, 4);
    expect(adjusted).toBe(true);
    expect(rect.x0).toBeGreaterThanOrEqual(4);
    expect(rect.y0).toBeGreaterThanOrEqual(4);
    expect(rect.x0 + rect.width).toBeLessThanOrEqual(124);
    expect(rect.y0 + rect.height).toBeLessThanOrEqual(124);
  });

  it("rejects images smaller than the margin allows", () => {
    expect(() => snapRectToMargin({ x0: 0, y0: 0, width: 4, height: 4 }, 8, 8, 4)).toThrow();
  });
});

describe("policy validation", () => {
  const base = {
    metric: "max_strain" as const,
    thresholds: [[0.01, 4], [0.03, 16]] as [number, number][],
    base_fps: 1,
    fps_min: 1,
    fps_max: 133,
    topk_fraction: null,
  };

  it("accepts a sane policy", () => {
    expect(validatePolicy(base)).toEqual([]);
  });

  it("flags non-monotone tables", () => {
    expect(validatePolicy({ ...base, thresholds: [[0.03, 4], [0.01, 16]] })).not.toEqual([]);
    expect(validatePolicy({ ...base, thresholds: [[0.01, 16], [0.03, 4]] })).not.toEqual([]);
  });

  it("flags rates outside the envelope", () => {
    expect(validatePolicy({ ...base, thresholds: [[0.01, 500]] })).not.toEqual([]);
    expect(validatePolicy({ ...base, base_fps: 0.1 })).not.toEqual([]);
  });

  it("parses and formats threshold text", () => {
    const rows = parseThresholds("0.01:4, 0.03:16");
    expect(rows).toEqual([[0.01, 4], [0.03, 16]]);
    expect(formatThresholds(rows)).toBe("0.01:4, 0.03:16");
    expect(() => parseThresholds("0.01:x")).toThrow();
  });
});

describe("heatmap rendering", () => {
  it("maps the fixed scale endpoints to scale extremes", () => {
    const values = new Float32Array([DEFAULT_SCALE[0], DEFAULT_SCALE[1]]);
    const valid = new Uint8Array([1, 1]);
    const rgba = renderHeatmap(values, valid, 2, 1);
    const low = divergingColor(0);
    const high = divergingColor(1);
    expect([rgba[0], rgba[1], rgba[2]]).toEqual(low);
    expect([rgba[4], rgba[5], rgba[6]]).toEqual(high);
  });

  it("renders invalid pixels with the distinct color", () => {
    const rgba = renderHeatmap(new Float32Array([0.03, 0.03]), new Uint8Array([1, 0]), 2, 1);
    expect([rgba[4], rgba[5], rgba[6]]).toEqual(INVALID_RGB);
  });

  it("auto scale spans only valid values", () => {
    const values = new Float32Array([0.0, 0.5, 99.0]);
    const valid = new Uint8Array([1, 1, 0]);
    const rgba = renderHeatmap(values, valid, 3, 1, { auto: true });
    expect([rgba[4], rgba[5], rgba[6]]).toEqual(divergingColor(1)); // 0.5 is the valid max
  });

  it("rejects size mismatches", () => {
    expect(() => renderHeatmap(new Float32Array(4), new Uint8Array(4), 3, 2)).toThrow();
  });
});
