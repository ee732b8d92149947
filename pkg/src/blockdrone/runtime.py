"""Wiring: mission + simulator + mapping over one bus, headless.

Standalone mode co-simulates everything in-process on a virtual clock:
the mission interpreter's wait blocks advance the simulator tick by tick,
frames flow straight into the mapping pipeline, and every byte of output
is a deterministic function of (mission, scene, seed).

Live mode reuses the same collector against a remote broker: run results
(pose stream, ground truth, map point batches) are gathered from bus
subscriptions either way, so a standalone run and a networked run write
identical artifact kinds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bus import Broker
from .geometry import CameraIntrinsics
from .mapeval import PointCloud, Trajectory, TrajectoryPose, write_ply, write_tum
from .missions import BlockProgram, ExecutionTrace, execute
from .sim import DroneSim, Scene, SimConfig, default_scene
from .slam import SlamConfig, SlamNode

SETTLE_TIMEOUT_S = 60.0


class Collector:
    """Accumulates run outputs from bus subscriptions.

    Subscribes the estimated pose stream, the simulator ground truth and
    the incremental map point batches; pump() must be called often enough
    that bounded queues never overflow.
    """

    def __init__(self, bus, cmd_prefix: str = "/tello", slam_prefix: str = "/slam"):
        self._subs = {
            "est": bus.subscribe(f"{slam_prefix}/pose"),
            "points": bus.subscribe(f"{slam_prefix}/points"),
            "gt": bus.subscribe(f"{cmd_prefix}/ground_truth"),
            "odom": bus.subscribe(f"{cmd_prefix}/odom"),
        }
        self.est_poses: list[dict] = []
        self.gt_poses: list[dict] = []
        self.point_batches: list[dict] = []
        self.odometry: list[dict] = []

    def pump(self) -> None:
        self.est_poses.extend(self._subs["est"].drain())
        self.gt_poses.extend(self._subs["gt"].drain())
        self.point_batches.extend(self._subs["points"].drain())
        self.odometry.extend(self._subs["odom"].drain())

    def trajectories(self) -> tuple[Trajectory, Trajectory]:
        self.pump()
        est = Trajectory(
            [TrajectoryPose(p["t"], p["position"], p["quaternion"]) for p in self.est_poses]
        )
        gt = Trajectory(
            [TrajectoryPose(p["t"], p["position"], p["quaternion"]) for p in self.gt_poses]
        )
        return est, gt

    def cloud(self) -> PointCloud:
        self.pump()
        pts = [p for batch in self.point_batches for p in batch["points"]]
        return PointCloud(np.array(pts, dtype=np.float32).reshape(-1, 3))

    def last_mode(self) -> str | None:
        self.pump()
        return self.odometry[-1]["mode"] if self.odometry else None


@dataclass
class RunArtifacts:
    trace: ExecutionTrace
    cloud: PointCloud
    est: Trajectory
    gt: Trajectory
    events: dict = field(default_factory=dict)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "trace": out / "trace.json",
            "map": out / "map.ply",
            "traj_est": out / "traj_est.tum",
            "traj_gt": out / "traj_gt.tum",
        }
        paths["trace"].write_text(self.trace.to_json() + "\n", encoding="ascii")
        write_ply(self.cloud, paths["map"], mode="binary_le")
        write_tum(self.est, paths["traj_est"])
        write_tum(self.gt, paths["traj_gt"])
        return {k: str(v) for k, v in paths.items()}


class _CosimClock:
    """Mission-facing clock that advances the whole runtime when slept.

    now() is the exact sum of slept durations (trace timestamps stay
    crisp); the simulator follows on its dt grid.
    """

    def __init__(self, runtime: "StandaloneRuntime"):
        self._runtime = runtime
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot sleep a negative duration")
        self._now += seconds
        self._runtime.advance_to(self._now)


class StandaloneRuntime:
    """In-process broker + simulator + mapping pipeline on a virtual clock."""

    def __init__(
        self,
        scene: Scene | None = None,
        sim_cfg: SimConfig | None = None,
        slam_cfg: SlamConfig | None = None,
        frame_rate: float = 10.0,
        cmd_prefix: str = "/tello",
        seed: int = 0,
    ):
        self.broker = Broker()
        self.scene = scene if scene is not None else default_scene(seed)
        self.sim_cfg = sim_cfg if sim_cfg is not None else SimConfig()
        slam_cfg = slam_cfg if slam_cfg is not None else SlamConfig(seed=seed)
        self.slam = SlamNode(self.broker, self.sim_cfg.camera, slam_cfg,
                             image_topic=f"{cmd_prefix}/image")
        self.events: dict = {}
        self.collector = Collector(self.broker, cmd_prefix=cmd_prefix)
        # frames go straight into the pipeline; re-encoding them as bus
        # payloads would only burn the virtual-time budget
        self.sim = DroneSim(
            self.broker,
            self.scene,
            self.sim_cfg,
            frame_rate=frame_rate,
            cmd_prefix=cmd_prefix,
            publish_images=False,
            frame_sinks=[self._on_frame],
        )
        self.clock = _CosimClock(self)

    def _on_frame(self, frame) -> None:
        result = self.slam.process(frame)
        self.events[result.event] = self.events.get(result.event, 0) + 1

    def advance_to(self, t: float) -> None:
        ticks = round((t - self.sim.state.t) / self.sim_cfg.dt)
        for _ in range(ticks):
            self.sim.tick()
        self.collector.pump()

    def run_mission(self, program: BlockProgram) -> ExecutionTrace:
        return execute(program, self.broker, self.clock)

    def settle(self, timeout: float = SETTLE_TIMEOUT_S) -> None:
        """Keep simulating until the drone is back on the ground."""
        deadline = self.sim.state.t + timeout
        while self.sim.state.mode != "landed" and self.sim.state.t < deadline:
            self.advance_to(self.sim.state.t + 0.5)

    def artifacts(self, trace: ExecutionTrace) -> RunArtifacts:
        est, gt = self.collector.trajectories()
        return RunArtifacts(trace=trace, cloud=self.collector.cloud(),
                            est=est, gt=gt, events=dict(self.events))


def run_standalone(
    program: BlockProgram,
    scene: Scene | None = None,
    sim_cfg: SimConfig | None = None,
    slam_cfg: SlamConfig | None = None,
    frame_rate: float = 10.0,
    cmd_prefix: str = "/tello",
    seed: int = 0,
    settle: bool = True,
) -> RunArtifacts:
    """Execute a mission end to end in-process; returns all run artifacts."""
    runtime = StandaloneRuntime(
        scene=scene,
        sim_cfg=sim_cfg,
        slam_cfg=slam_cfg,
        frame_rate=frame_rate,
        cmd_prefix=cmd_prefix,
        seed=seed,
    )
    trace = runtime.run_mission(program)
    if settle:
        runtime.settle()
    return runtime.artifacts(trace)
