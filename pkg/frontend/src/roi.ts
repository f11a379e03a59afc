// ROI selection geometry: drag rectangle -> margin-snapped integer rect.

export interface Rect {
  x0: number;
  y0: number;
  width: number;
  height: number;
}

export const MIN_SIDE = 3;

export function dragToRect(x1: number, y1: number, x2: number, y2: number): Rect {
  const x0 = Math.min(x1, x2);
  const y0 = Math.min(y1, y2);
  return {
    x0: Math.round(x0),
    y0: Math.round(y0),
    width: Math.max(1, Math.round(Math.abs(x2 - x1))),
    height: Math.max(1, Math.round(Math.abs(y2 - y1))),
  };
}

/**
 * Snap a rect inward so it keeps `margin` px from every image border (the
 * solver's window and gradient stencils must not leave the frame). Returns
 * the snapped rect and whether anything moved.
 */
export function snapRectToMargin(
  rect: Rect,
  imageWidth: number,
  imageHeight: number,
  margin: number,
): { rect: Rect; adjusted: boolean } {
  const maxW = imageWidth - 2 * margin;
  const maxH = imageHeight - 2 * margin;
  if (maxW < MIN_SIDE || maxH < MIN_SIDE) {
    throw new Error(`image ${imageWidth}x${imageHeight} too small for margin ${margin}`);
  }
  let { x0, y0, width, height } = rect;
  width = Math.min(Math.max(width, MIN_SIDE), maxW);
  height = Math.min(Math.max(height, MIN_SIDE), maxH);
  x0 = Math.min(Math.max(x0, margin), imageWidth - margin - width);
  y0 = Math.min(Math.max(y0, margin), imageHeight - margin - height);
  const snapped = { x0, y0, width, height };
  const adjusted =
    snapped.x0 !== rect.x0 ||
    snapped.y0 !== rect.y0 ||
    snapped.width !== rect.width ||
    snapped.height !== rect.height;
  return { rect: snapped, adjusted };
}

export function rectToMessage(rect: Rect): [number, number, number, number] {
  return [rect.x0, rect.y0, rect.width, rect.height];
}
