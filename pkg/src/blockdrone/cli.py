"""Command line entry points: serve, run, eval, scene-gen.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import functools
import http.server
import json
import signal
import sys
import threading
import time
from pathlib import Path

from .bus import BindFailure, Broker, BusServer, BusUnavailable, TcpBusClient
from .clock import WallClock
from .mapeval import (
    MalformedLine,
    NoAssociations,
    NonMonotoneTimestamps,
    ate_report,
    read_tum,
)
from .missions import MissionAbort, MissionError, execute, load_mission, validate
from .runtime import Collector, RunArtifacts, run_standalone
from .sim import DroneSim, Scene, SimConfig, default_scene
from .slam import SlamConfig, SlamNode

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    cfg = json.loads(p.read_text())
    for key in ("scene", "mission"):
        if key in cfg and not Path(cfg[key]).exists():
            raise FileNotFoundError(f"config references missing {key} file {cfg[key]}")
    return cfg


def _scene_from(args, cfg: dict, seed: int) -> Scene:
    scene_path = args.scene or cfg.get("scene")
    if scene_path:
        return Scene.load(scene_path)
    return default_scene(seed)


def _sim_config(cfg: dict) -> SimConfig:
    return SimConfig(**cfg.get("sim", {}))


def _slam_config(cfg: dict, seed: int) -> SlamConfig:
    params = dict(cfg.get("slam", {}))
    params.setdefault("seed", seed)
    return SlamConfig(**params)


# ----------------------------------------------------------------- serve


def cmd_serve(args) -> int:
    cfg = _load_config(args.config)
    tcp_host, tcp_port = _host_port(args.tcp or cfg.get("tcp", "127.0.0.1:9090"))
    ws_host, ws_port = _host_port(args.ws or cfg.get("ws", "127.0.0.1:9091"))
    try:
        server = BusServer(
            tcp_host=tcp_host, tcp_port=tcp_port, ws_host=ws_host, ws_port=ws_port
        ).start()
    except BindFailure as exc:
        print(f"bind failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    sim = slam = None
    httpd = None
    if args.with_sim:
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        scene = _scene_from(args, cfg, seed)
        sim_cfg = _sim_config(cfg)
        sim = DroneSim(
            server.broker,
            scene,
            sim_cfg,
            frame_rate=args.frame_rate,
            cmd_prefix=args.cmd_prefix,
        ).start()
        slam = SlamNode(
            server.broker,
            sim_cfg.camera,
            _slam_config(cfg, seed),
            image_topic=f"{args.cmd_prefix}/image",
        ).start()
    if args.console_dir:
        handler = functools.partial(
            http.server.SimpleHTTPRequestHandler, directory=args.console_dir
        )
        httpd = http.server.ThreadingHTTPServer(("127.0.0.1", args.http_port), handler)
        threading.Thread(target=httpd.serve_forever, daemon=True).start()
        print(f"console: http://127.0.0.1:{args.http_port}/")

    print(
        f"bus serving tcp={tcp_host}:{server.tcp_port} "
        f"ws={ws_host}:{server.ws_port}{server.ws_path}"
        + (" (sim attached)" if sim else "")
    )
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.is_set():
            stop.wait(0.2)
    finally:
        if slam:
            slam.stop()
        if sim:
            sim.stop()
        if httpd:
            httpd.shutdown()
        server.stop()
    return EXIT_OK


# ------------------------------------------------------------------- run


def _run_live(args, cfg, program) -> RunArtifacts:
    host, port = _host_port(args.bus or cfg.get("tcp", "127.0.0.1:9090"))
    client = TcpBusClient(host, port)
    collector = Collector(client, cmd_prefix=args.cmd_prefix)
    time.sleep(0.2)  # let subscriptions land before the mission fires
    trace = execute(program, client, WallClock())
    deadline = time.monotonic() + 60.0
    while time.monotonic() < deadline:
        time.sleep(0.5)
        if collector.last_mode() == "landed":
            break
    est, gt = collector.trajectories()
    artifacts = RunArtifacts(trace=trace, cloud=collector.cloud(), est=est, gt=gt)
    client.close()
    return artifacts


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
        mission_path = args.mission or cfg.get("mission")
        if not mission_path:
            print("no mission given", file=sys.stderr)
            return EXIT_USAGE
        program = load_mission(mission_path)
    except (FileNotFoundError, MissionError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE

    issues = validate(program)
    if issues:
        for issue in issues:
            print(f"validation: {issue}", file=sys.stderr)
        return EXIT_USAGE

    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out_dir = args.out or cfg.get("out") or "run_output"
    try:
        if args.standalone:
            artifacts = run_standalone(
                program,
                scene=_scene_from(args, cfg, seed),
                sim_cfg=_sim_config(cfg),
                slam_cfg=_slam_config(cfg, seed),
                frame_rate=args.frame_rate,
                cmd_prefix=args.cmd_prefix,
                seed=seed,
            )
        else:
            artifacts = _run_live(args, cfg, program)
    except MissionAbort as exc:
        print(f"mission aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (BusUnavailable, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    paths = artifacts.write(out_dir)
    summary = {
        "out": paths,
        "publishes": len(artifacts.trace.publishes()),
        "map_points": len(artifacts.cloud),
        "est_poses": len(artifacts.est),
        "gt_poses": len(artifacts.gt),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# ------------------------------------------------------------------ eval


def cmd_eval(args) -> int:
    try:
        est = read_tum(args.est)
        gt = read_tum(args.gt)
        report = ate_report(est, gt)
    except (FileNotFoundError, MalformedLine, NonMonotoneTimestamps, NoAssociations, OSError) as exc:
        print(f"eval failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report))
    return EXIT_OK


# ------------------------------------------------------------- scene-gen


def cmd_scene_gen(args) -> int:
    scene = default_scene(seed=args.seed, n_landmarks=args.landmarks)
    if args.out:
        scene.save(args.out)
        print(f"wrote {args.out} ({len(scene.landmarks)} landmarks)")
    else:
        print(scene.to_json())
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockdrone",
        description="block-programmed drone missions with simulated monocular mapping",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the topic bus (optionally with the simulator)")
    p_serve.add_argument("--tcp", help="TCP endpoint host:port (default 127.0.0.1:9090)")
    p_serve.add_argument("--ws", help="WebSocket endpoint host:port (default 127.0.0.1:9091)")
    p_serve.add_argument("--with-sim", action="store_true", help="attach simulator and mapping")
    p_serve.add_argument("--scene", help="scene JSON path (default: generated from seed)")
    p_serve.add_argument("--seed", type=int, default=None)
    p_serve.add_argument("--frame-rate", type=float, default=10.0)
    p_serve.add_argument("--cmd-prefix", default="/tello")
    p_serve.add_argument("--console-dir", help="serve this directory over HTTP")
    p_serve.add_argument("--http-port", type=int, default=9092)
    p_serve.add_argument("--config", help="JSON config file")
    p_serve.set_defaults(func=cmd_serve)

    p_run = sub.add_parser("run", help="execute a mission and write run artifacts")
    p_run.add_argument("mission", nargs="?", help="mission file (.mission.json)")
    p_run.add_argument("--standalone", action="store_true",
                       help="run everything in-process on a virtual clock")
    p_run.add_argument("--bus", help="broker TCP endpoint for live runs")
    p_run.add_argument("--scene", help="scene JSON path (default: generated from seed)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", help="output directory (default run_output)")
    p_run.add_argument("--frame-rate", type=float, default=10.0)
    p_run.add_argument("--cmd-prefix", default="/tello")
    p_run.add_argument("--config", help="JSON config file")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="absolute trajectory error between two TUM files")
    p_eval.add_argument("est")
    p_eval.add_argument("gt")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("scene-gen", help="emit a seeded landmark scene")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--landmarks", type=int, default=200)
    p_gen.add_argument("--out", help="output path (stdout when omitted)")
    p_gen.set_defaults(func=cmd_scene_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
