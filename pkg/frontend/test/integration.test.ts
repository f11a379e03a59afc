// Live end-to-end check against the real analysis server: connect, select
// the ROI (rejected then accepted), watch snapshots accumulate as chart
// points, change the policy mid-run and observe the next-batch rate change.
//
// Spawns the Python CLI; skipped when python3/dicflow is unavailable.

import { spawn, spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import net from "node:net";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SnapshotPayload } from "../src/protocol.js";
import { snapRectToMargin, rectToMessage } from "../src/roi.js";
import { ClientSession } from "../src/session.js";
import { connectTcp } from "../src/transport.js";

const PYTHON = process.env.DICFLOW_PYTHON ?? "python3";

function pythonAvailable(): boolean {
  const probe = spawnSync(PYTHON, ["-c", "import dicflow"], { timeout: 20000 });
  return probe.status === 0;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
    srv.once("error", reject);
  });
}

const available = pythonAvailable();
const suite = available ? describe : describe.skip;

suite("live run integration", () => {
  let child: ReturnType<typeof spawn> | null = null;
  let port = 0;
  let workDir = "";

  beforeAll(async () => {
    port = await freePort();
    workDir = mkdtempSync(join(tmpdir(), "dicflow-monitor-"));
    const config = {
      batch_duration: 2.0,
      policy: { metric: "constant", thresholds: [], base_fps: 1.0 },
      roi: "interactive",
      flow: { window_half: 3 },
      strain_smooth_sigma: 3.0,
      max_batches: 6,
      simulation: {
        speckle: {
          width: 96,
          height: 96,
          dot_density: 20.0,
          dot_radius_range: [2.0, 4.0],
          blur_sigma: 1.2,
          rng_seed: 7,
        },
        noise_sigma: 0.0,
        activation_delay: 1.0,
      },
      stream: { host: "127.0.0.1", port },
    };
    const schedule = [
      { t: 0.0, map: { kind: "translate", u: 0.0, v: 0.0 } },
      { t: 20.0, map: { kind: "affine", dvdy: 0.004 } },
    ];
    writeFileSync(join(workDir, "config.json"), JSON.stringify(config));
    writeFileSync(join(workDir, "schedule.json"), JSON.stringify(schedule));
    child = spawn(
      PYTHON,
      [
        "-m",
        "dicflow.cli",
        "simulate",
        join(workDir, "config.json"),
        join(workDir, "schedule.json"),
        join(workDir, "out"),
        "--serve",
      ],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
  }, 30000);

  afterAll(() => {
    child?.kill("SIGKILL");
  });

  it("drives ROI selection, charts, and a live policy change", async () => {
    // wait for the listener
    let transport = null as Awaited<ReturnType<typeof connectTcp>> | null;
    for (let i = 0; i < 100 && !transport; i++) {
      try {
        transport = await connectTcp("127.0.0.1", port);
      } catch {
        await new Promise((r) => setTimeout(r, 100));
      }
    }
    expect(transport).not.toBeNull();

    const snapshots: SnapshotPayload[] = [];
    let firstFrame: { width: number; height: number } | null = null;
    let ended: string | null = null;
    const session = new ClientSession({
      onFirstFrame: (payload) => {
        firstFrame = { width: Number(payload.width), height: Number(payload.height) };
      },
      onSnapshot: (snap) => snapshots.push(snap),
      onEnded: (status) => {
        ended = status;
      },
    });
    session.attach(transport!);
    await session.subscribe();

    const waitFor = async (cond: () => boolean, ms: number) => {
      const deadline = Date.now() + ms;
      while (!cond() && Date.now() < deadline) {
        await new Promise((r) => setTimeout(r, 50));
      }
      expect(cond()).toBe(true);
    };

    await waitFor(() => firstFrame !== null, 30000);
    expect(firstFrame!.width).toBe(96);

    // margin validation: a border-hugging rect is rejected by the server
    const bad = await session.setRoi([0, 0, 96, 96]);
    expect(bad.ok).toBe(false);
    expect(bad.reason).toMatch(/margin/);

    // the client-side snap produces an acceptable rect from the same drag
    const { rect } = snapRectToMargin({ x0: 0, y0: 0, width: 96, height: 96 }, 96, 96, 4);
    const good = await session.setRoi(rectToMessage(rect));
    expect(good.ok).toBe(true);

    // after two snapshots, edit the policy: constant 4 fps
    await waitFor(() => snapshots.length >= 2, 60000);
    const ack = await session.setPolicy({
      metric: "constant",
      thresholds: [],
      base_fps: 4.0,
      fps_min: 1.0,
      fps_max: 133.0,
      topk_fraction: null,
    });
    expect(ack.ok).toBe(true);
    const editAt = snapshots.length;

    await waitFor(() => ended !== null, 90000);

    // N snapshots -> N chart points per series
    expect(session.fpsTrace.length).toBe(snapshots.length);
    const withStats = snapshots.filter((s) => s.stats !== null).length;
    expect(session.maxStrain.length).toBe(withStats);

    // the policy edit changed the server's next-batch rate
    const after = snapshots.slice(editAt);
    expect(after.some((s) => s.next_fps === 4.0)).toBe(true);
    expect(snapshots.some((s) => s.fps_used === 4.0)).toBe(true);
    expect(ended).toBe("completed");
  }, 200000);
});
