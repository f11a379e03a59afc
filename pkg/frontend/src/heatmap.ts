// Longitudinal-strain heatmap rendering: raster -> RGBA bytes.
//
// The color scale is fixed by default (auto-scaling hides strain growth
// between snapshots); invalid pixels (correlation loss) render as a
// distinct neutral gray rather than a color from the scale.

export const DEFAULT_SCALE: [number, number] = [0.0, 0.06];

export const INVALID_RGB: [number, number, number] = [64, 64, 64];

/** Blue -> white -> red diverging map over t in [0, 1]. */
export function divergingColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  if (x < 0.5) {
    const u = x / 0.5;
    return [Math.round(40 + 215 * u), Math.round(60 + 195 * u), 255];
  }
  const u = (x - 0.5) / 0.5;
  return [255, Math.round(255 - 195 * u), Math.round(255 - 215 * u)];
}

export interface HeatmapOptions {
  scale?: [number, number];
  auto?: boolean;
}

export function renderHeatmap(
  values: Float32Array,
  valid: Uint8Array,
  width: number,
  height: number,
  options: HeatmapOptions = {},
): Uint8ClampedArray<ArrayBuffer> {
  if (values.length !== width * height || valid.length !== values.length) {
    throw new Error("raster size mismatch");
  }
  let [lo, hi] = options.scale ?? DEFAULT_SCALE;
  if (options.auto) {
    lo = Infinity;
    hi = -Infinity;
    for (let i = 0; i < values.length; i++) {
      if (!valid[i]) continue;
      if (values[i] < lo) lo = values[i];
      if (values[i] > hi) hi = values[i];
    }
    if (!(hi > lo)) {
      lo = 0;
      hi = 1;
    }
  }
  const span = hi - lo || 1;
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0; i < values.length; i++) {
    const o = i * 4;
    if (!valid[i]) {
      out[o] = INVALID_RGB[0];
      out[o + 1] = INVALID_RGB[1];
      out[o + 2] = INVALID_RGB[2];
    } else {
      const [r, g, b] = divergingColor((values[i] - lo) / span);
      out[o] = r;
      out[o + 1] = g;
      out[o + 2] = b;
    }
    out[o + 3] = 255;
  }
  return out;
}
