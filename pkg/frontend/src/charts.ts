// Minimal append-only line charts on a 2D canvas; one chart per canvas.

import { SeriesPoint } from "./session.js";

export interface ChartStyle {
  color: string;
  label: string;
}

export function drawChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  series: { points: SeriesPoint[]; style: ChartStyle }[],
  options: { logY?: boolean } = {},
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#111418";
  ctx.fillRect(0, 0, width, height);
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) return;
  const xMin = Math.min(...all.map((p) => p.batch));
  const xMax = Math.max(...all.map((p) => p.batch), xMin + 1);
  const rawY = all.map((p) => (options.logY ? Math.log10(Math.max(p.value, 1e-6)) : p.value));
  let yMin = Math.min(...rawY);
  let yMax = Math.max(...rawY);
  if (yMax === yMin) {
    yMax = yMin + 1;
  }
  const pad = 28;
  const toX = (b: number) => pad + ((b - xMin) / (xMax - xMin)) * (width - 2 * pad);
  const toY = (v: number) => {
    const value = options.logY ? Math.log10(Math.max(v, 1e-6)) : v;
    return height - pad - ((value - yMin) / (yMax - yMin)) * (height - 2 * pad);
  };

  ctx.strokeStyle = "#39414d";
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
  ctx.font = "10px sans-serif";
  ctx.fillStyle = "#9aa7b5";
  ctx.fillText(String(xMin), pad, height - pad + 12);
  ctx.fillText(String(xMax), width - pad - 12, height - pad + 12);

  let legendX = pad + 4;
  for (const { points, style } of series) {
    if (points.length === 0) continue;
    ctx.strokeStyle = style.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((p, i) => {
      const x = toX(p.batch);
      const y = toY(p.value);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = style.color;
    ctx.fillText(style.label, legendX, pad - 6);
    legendX += ctx.measureText(style.label).width + 14;
  }
}
