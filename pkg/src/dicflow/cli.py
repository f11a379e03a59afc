"""Operator entry points: simulate, replay, analyze, watch.

Exit codes: 0 success, 2 config error, 3 source error, 4 analysis-fatal.
Every failure prints one machine-parsable line: "error: <what>".
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .controller import RunConfig, config_from_json, default_policy, run_experiment
from .errors import ConfigError, DicflowError, DimensionError, LoadError, ParseError
from .imaging.deform import schedule_from_json, schedule_to_json
from .imaging.sources import DEFAULT_ACTIVATION_DELAY, ReplaySource, SimulatedSource
from .imaging.speckle import spec_from_json, spec_to_json
from .persistence import ArchiveWriter, export_report
from .stream.client import StreamClient
from .stream.server import DEFAULT_HOST, DEFAULT_PORT, StreamServer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOURCE = 3
EXIT_ANALYSIS = 4

SPARK_GLYPHS = "▁▂▃▄▅▆▇█"


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _parse_run_config(obj: dict, path: str) -> RunConfig:
    try:
        return config_from_json(obj)
    except DicflowError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _apply_policy_flag(config: RunConfig, flag: str | None) -> RunConfig:
    if flag is None:
        return config
    metric = {"max": "max_strain", "delmax": "del_max_strain", "constant": "constant"}.get(flag)
    if metric is None:
        raise ConfigError(f"unknown policy {flag!r}")
    return dataclasses.replace(config, policy=default_policy(metric))


def _start_server(config: RunConfig, stream_cfg: dict, run_id: str) -> StreamServer:
    server = StreamServer(
        host=stream_cfg.get("host", DEFAULT_HOST),
        port=int(stream_cfg.get("port", DEFAULT_PORT)),
        ws_port=stream_cfg.get("ws_port"),
        run_id=run_id,
        margin=config.flow.window_half + 1,
        roi_preset=config.roi is not None,
    )
    server.start()
    return server


def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    config = _parse_run_config(raw, args.config)
    sim = raw.get("simulation", {})
    try:
        speckle = spec_from_json(sim.get("speckle", {}))
    except DicflowError as exc:
        raise ConfigError(f"{args.config}: simulation.speckle: {exc}") from exc
    if args.seed is not None:
        speckle = dataclasses.replace(speckle, rng_seed=args.seed)
    config = _apply_policy_flag(config, args.policy)
    schedule_json = _load_json(args.schedule)
    try:
        schedule = schedule_from_json(schedule_json)
    except DicflowError as exc:
        raise ConfigError(f"{args.schedule}: {exc}") from exc

    noise = float(sim.get("noise_sigma", 0.0))
    delay = float(sim.get("activation_delay", DEFAULT_ACTIVATION_DELAY))
    source = SimulatedSource(
        speckle, schedule, noise_sigma=noise, fps=config.policy.base_fps, activation_delay=delay
    )
    source_info = {
        "type": "simulated",
        "speckle": spec_to_json(speckle),
        "noise_sigma": noise,
        "activation_delay": delay,
        "schedule": schedule_to_json(schedule),
    }
    writer = ArchiveWriter(args.out, config, source_info=source_info)
    server = None
    if args.serve and not args.headless:
        server = _start_server(config, raw.get("stream", {}), writer.run_id)
    try:
        records = run_experiment(
            source,
            config,
            archive=writer,
            publisher=server,
            mailbox=server.mailbox if server else None,
        )
    finally:
        if server is not None:
            server.close()
    frames = sum(r.frame_count for r in records)
    print(f"archived {len(records)} batches, {frames} frames -> {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    raw = _load_json(args.config)
    config = _parse_run_config(raw, args.config)
    source = ReplaySource(args.manifest)
    writer = ArchiveWriter(
        args.out, config, source_info={"type": "replay", "manifest": str(args.manifest)}
    )
    records = run_experiment(source, config, archive=writer)
    frames = sum(r.frame_count for r in records)
    print(f"replayed {len(records)} batches, {frames} frames -> {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = export_report(args.archive, out_dir=args.out, phase_split=args.phase_split)
    print(f"report -> {out}")
    return EXIT_OK


def _sparkline(values: list[float], width: int = 40) -> str:
    if not values:
        return ""
    tail = values[-width:]
    lo, hi = min(tail), max(tail)
    span = (hi - lo) or 1.0
    return "".join(SPARK_GLYPHS[int((v - lo) / span * (len(SPARK_GLYPHS) - 1))] for v in tail)


def cmd_watch(args) -> int:
    host, _, port = args.address.rpartition(":")
    host = host or DEFAULT_HOST
    try:
        client = StreamClient(host, int(port), timeout=args.timeout)
    except OSError as exc:
        raise LoadError(f"cannot connect to {args.address}: {exc}") from exc
    max_history: list[float] = []
    fps_history: list[float] = []
    with client:
        client.subscribe()
        while True:
            msg = client.recv()
            if msg is None:
                print("connection closed")
                return EXIT_OK
            mtype, payload = msg["type"], msg["payload"]
            if mtype == "HELLO":
                print(f"connected: run {payload.get('run_id', '')} [{payload.get('state', '')}]")
            elif mtype == "BATCH_SNAPSHOT":
                stats = payload.get("stats")
                fps_history.append(float(payload["fps_used"]))
                if stats:
                    max_history.append(float(stats["max_eyy"]))
                    print(
                        f"batch {payload['batch_index']:4d}  fps {payload['fps_used']:7.2f} "
                        f"-> {payload['next_fps']:7.2f}  max_eyy {stats['max_eyy']:+.5f} "
                        f"mean {stats['mean_eyy']:+.5f}  valid {stats['valid_pixel_count']}"
                    )
                else:
                    print(f"batch {payload['batch_index']:4d}  flagged (no statistics)")
                print(f"  max_eyy {_sparkline(max_history)}")
                print(f"  fps     {_sparkline(fps_history)}")
            elif mtype == "RUN_ENDED":
                print(f"run ended: {payload.get('status')}")
                return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dicflow",
        description="Closed-loop DIC: dense optical-flow strain with strain-adaptive frame rate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the loop against a simulated camera")
    sim.add_argument("config", help="run config JSON")
    sim.add_argument("schedule", help="deformation schedule JSON")
    sim.add_argument("out", help="archive output directory")
    sim.add_argument("--policy", choices=["max", "delmax", "constant"], default=None)
    sim.add_argument("--seed", type=int, default=None, help="override the speckle RNG seed")
    sim.add_argument("--serve", action="store_true", help="start the live stream server")
    sim.add_argument("--headless", action="store_true", help="never open a listener")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("replay", help="run the analysis pipeline over recorded frames")
    rep.add_argument("manifest", help="replay manifest JSON")
    rep.add_argument("config", help="run config JSON")
    rep.add_argument("out", help="archive output directory")
    rep.set_defaults(func=cmd_replay)

    ana = sub.add_parser("analyze", help="export CSV reports from an archive")
    ana.add_argument("archive", help="archive directory")
    ana.add_argument("--out", default=None, help="report directory (default: <archive>/report)")
    ana.add_argument("--phase-split", type=float, default=None, help="phase boundary time, seconds")
    ana.set_defaults(func=cmd_analyze)

    wat = sub.add_parser("watch", help="live text view of a running experiment")
    wat.add_argument("address", help="host:port of the stream server")
    wat.add_argument("--timeout", type=float, default=30.0)
    wat.set_defaults(func=cmd_watch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except (DimensionError, DicflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
