// Browser entry point: wires the session to the DOM.
//
// Layout (ids in index.html): frame canvas with ROI drag overlay, strain
// heatmap canvas, two chart canvases (strain history, fps trace), policy
// editor fields, stop button, status line.

import { drawChart } from "./charts.js";
import { DEFAULT_SCALE, renderHeatmap } from "./heatmap.js";
import { Policy, decodeRaster } from "./protocol.js";
import { dragToRect, rectToMessage, snapRectToMargin } from "./roi.js";
import { ClientSession } from "./session.js";
import { WebSocketTransport } from "./transport.js";

const MARGIN = 5; // window_half(=4)+1 of the accuracy config; server revalidates

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

function main(): void {
  const frameCanvas = el<HTMLCanvasElement>("frame");
  const heatCanvas = el<HTMLCanvasElement>("heatmap");
  const strainChart = el<HTMLCanvasElement>("strain-chart");
  const fpsChart = el<HTMLCanvasElement>("fps-chart");
  const autoScale = el<HTMLInputElement>("auto-scale");

  let frameImage: HTMLImageElement | null = null;
  let dragStart: [number, number] | null = null;
  let pendingRect: ReturnType<typeof dragToRect> | null = null;
  let roiAccepted = false;
  let lastSnapshot: ReturnType<typeof decodeRaster> | null = null;
  let lastValid: ReturnType<typeof decodeRaster> | null = null;

  const session = new ClientSession({
    onHello: (payload) => setStatus(`connected to run ${payload.run_id} [${payload.state}]`),
    onFirstFrame: (payload) => {
      frameImage = new Image();
      frameImage.onload = () => {
        frameCanvas.width = Number(payload.width);
        frameCanvas.height = Number(payload.height);
        redrawFrame();
        if (!roiAccepted) setStatus("drag a rectangle on the first frame to set the ROI");
      };
      frameImage.src = `data:image/png;base64,${payload.png}`;
    },
    onSnapshot: (snap) => {
      if (snap.eyy && snap.valid) {
        lastSnapshot = decodeRaster(snap.eyy);
        lastValid = decodeRaster(snap.valid);
        redrawHeatmap();
      }
      redrawCharts();
      const stats = snap.stats;
      if (stats) {
        setStatus(
          `batch ${snap.batch_index}: fps ${snap.fps_used} -> ${snap.next_fps}, ` +
            `max eyy ${stats.max_eyy.toFixed(5)}, valid ${stats.valid_pixel_count}`,
        );
      }
    },
    onEnded: (status) => setStatus(`run ended: ${status}`),
    onDisconnect: () => {
      setStatus("disconnected", true);
      el<HTMLButtonElement>("reconnect").hidden = false;
    },
  });

  function connect(): void {
    // ?ws=host:port overrides; default assumes the stream server's /ws port
    const params = new URLSearchParams(location.search);
    const target = params.get("ws") ?? (location.host || "127.0.0.1:7342");
    const proto = location.protocol === "https:" ? "wss" : "ws";
    const ws = new WebSocket(`${proto}://${target}/ws`);
    session.attach(new WebSocketTransport(ws));
    ws.addEventListener("open", () => {
      el<HTMLButtonElement>("reconnect").hidden = true;
      void session.subscribe();
    });
  }

  function redrawFrame(): void {
    const ctx = frameCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, frameCanvas.width, frameCanvas.height);
    if (frameImage) ctx.drawImage(frameImage, 0, 0);
    if (pendingRect) {
      ctx.strokeStyle = roiAccepted ? "#37d67a" : "#ffb020";
      ctx.lineWidth = 1.5;
      ctx.strokeRect(pendingRect.x0, pendingRect.y0, pendingRect.width, pendingRect.height);
    }
  }

  function redrawHeatmap(): void {
    if (!lastSnapshot || !lastValid) return;
    const { width, height } = lastSnapshot;
    heatCanvas.width = width;
    heatCanvas.height = height;
    const rgba = renderHeatmap(
      lastSnapshot.values as Float32Array,
      lastValid.values as Uint8Array,
      width,
      height,
      { scale: DEFAULT_SCALE, auto: autoScale.checked },
    );
    heatCanvas.getContext("2d")!.putImageData(new ImageData(rgba, width, height), 0, 0);
  }

  function redrawCharts(): void {
    drawChart(strainChart.getContext("2d")!, strainChart.width, strainChart.height, [
      { points: session.maxStrain, style: { color: "#ff6b6b", label: "max eyy" } },
      { points: session.meanStrain, style: { color: "#4dabf7", label: "mean eyy" } },
    ]);
    drawChart(
      fpsChart.getContext("2d")!,
      fpsChart.width,
      fpsChart.height,
      [{ points: session.fpsTrace, style: { color: "#ffd43b", label: "fps" } }],
      { logY: true },
    );
  }

  frameCanvas.addEventListener("mousedown", (ev) => {
    if (roiAccepted) return;
    const box = frameCanvas.getBoundingClientRect();
    dragStart = [ev.clientX - box.left, ev.clientY - box.top];
  });
  frameCanvas.addEventListener("mousemove", (ev) => {
    if (!dragStart || roiAccepted) return;
    const box = frameCanvas.getBoundingClientRect();
    pendingRect = dragToRect(dragStart[0], dragStart[1], ev.clientX - box.left, ev.clientY - box.top);
    redrawFrame();
  });
  frameCanvas.addEventListener("mouseup", (ev) => {
    if (!dragStart || roiAccepted) return;
    const box = frameCanvas.getBoundingClientRect();
    const raw = dragToRect(dragStart[0], dragStart[1], ev.clientX - box.left, ev.clientY - box.top);
    dragStart = null;
    const { rect, adjusted } = snapRectToMargin(raw, frameCanvas.width, frameCanvas.height, MARGIN);
    pendingRect = rect;
    redrawFrame();
    if (adjusted) setStatus("ROI snapped inward to the stencil margin");
    void session.setRoi(rectToMessage(rect)).then((ack) => {
      roiAccepted = ack.ok;
      if (!ack.ok) {
        setStatus(`ROI rejected: ${ack.reason}`, true);
        pendingRect = null;
      } else {
        setStatus("ROI accepted; analysis starting");
      }
      redrawFrame();
    });
  });

  el<HTMLButtonElement>("apply-policy").addEventListener("click", async () => {
    const { parseThresholds, validatePolicy } = await import("./policy.js");
    try {
      const policy: Policy = {
        metric: el<HTMLSelectElement>("metric").value as Policy["metric"],
        thresholds: parseThresholds(el<HTMLInputElement>("thresholds").value),
        base_fps: Number(el<HTMLInputElement>("base-fps").value),
        fps_min: 1.0,
        fps_max: 133.0,
        topk_fraction: null,
      };
      const problems = validatePolicy(policy);
      if (problems.length > 0) {
        setStatus(`policy invalid: ${problems[0]}`, true);
        return;
      }
      const ack = await session.setPolicy(policy);
      setStatus(ack.ok ? "policy applied (next batch)" : `policy rejected: ${ack.reason}`, !ack.ok);
    } catch (err) {
      setStatus(`policy invalid: ${err}`, true);
    }
  });

  el<HTMLButtonElement>("stop").addEventListener("click", () => {
    void session.stop().then((ack) => {
      setStatus(ack.ok ? "stop requested; run ends at the batch boundary" : "stop failed", !ack.ok);
    });
  });

  el<HTMLButtonElement>("reconnect").addEventListener("click", connect);
  autoScale.addEventListener("change", redrawHeatmap);
  connect();
}

main();
