"""Tello-class quadrotor simulator with a synthetic landmark camera.

Flight envelope follows the vendor sheet: 30 km/h (8.333 m/s) top speed,
50 m ceiling, 13 min (780 s) of battery.  Dynamics are deliberately simple:
first-order velocity response integrated by explicit Euler at a fixed dt,
a linear battery drain while airborne, and forced climb/descent maneuvers
for takeoff and landing.  Everything is deterministic for a given command
sequence.

The camera renders the scene's landmarks as 5x5 Gaussian dots on a dark
background, which is exactly the kind of blob the feature pipeline is
built to track, with ground-truth camera poses recorded per frame.
"""

from __future__ import annotations

import base64
import json
import math
import threading
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .clock import WallClock
from .geometry import SE3, CameraIntrinsics, camera_from_yaw, quat_from_rot, rotz

BACKGROUND = 10           # empty-sky pixel value
DOT_AMPLITUDE = 245.0     # full-brightness dot peak above background
DOT_SIGMA = 1.0           # px
DOT_RADIUS = 2            # 5x5 stamp
MIN_DEPTH = 0.1           # m; landmarks closer than this are culled


class BadPayload(ValueError):
    """Command payload that cannot be interpreted."""


class UnknownCommandTopic(ValueError):
    pass


# ------------------------------------------------------------------- config


@dataclass
class SimConfig:
    max_speed: float = 8.333            # m/s (30 km/h)
    max_altitude: float = 50.0          # m
    battery_duration: float = 780.0     # s of continuous flight (13 min)
    takeoff_hover: float = 1.0          # m
    dt: float = 0.02                    # s
    velocity_time_constant: float = 0.3  # s
    takeoff_climb_rate: float = 1.0     # m/s
    landing_rate: float = 0.5           # m/s
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)

    def __post_init__(self):
        for name in (
            "max_speed",
            "max_altitude",
            "battery_duration",
            "takeoff_hover",
            "dt",
            "velocity_time_constant",
            "takeoff_climb_rate",
            "landing_rate",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dt > 0.1:
            raise ValueError("dt must be <= 0.1 s")


# ----------------------------------------------------------------- commands


@dataclass
class Takeoff:
    pass


@dataclass
class Land:
    pass


@dataclass
class VelocityCmd:
    """Body-frame velocity setpoint as fractions of max speed, plus yaw rate."""

    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    wz: float = 0.0  # rad/s

    def __post_init__(self):
        self.vx = min(1.0, max(-1.0, float(self.vx)))
        self.vy = min(1.0, max(-1.0, float(self.vy)))
        self.vz = min(1.0, max(-1.0, float(self.vz)))
        self.wz = float(self.wz)


CommandInput = Takeoff | Land | VelocityCmd


def ingest_command(payload, topic: str, prefix: str = "/tello") -> CommandInput:
    """Map a bus payload on a command topic to a typed command.

    cmd_vel accepts a bare number (forward fraction) or an object with any
    of vx/vy/vz/wz; takeoff and land accept anything.
    """
    if topic == f"{prefix}/takeoff":
        return Takeoff()
    if topic == f"{prefix}/land":
        return Land()
    if topic == f"{prefix}/cmd_vel":
        if isinstance(payload, bool):
            raise BadPayload(f"cmd_vel payload must be numeric, got {payload!r}")
        if isinstance(payload, (int, float)):
            return VelocityCmd(vx=float(payload))
        if isinstance(payload, dict):
            unknown = set(payload) - {"vx", "vy", "vz", "wz"}
            if unknown:
                raise BadPayload(f"cmd_vel object has unknown keys {sorted(unknown)}")
            vals = {}
            for key in ("vx", "vy", "vz", "wz"):
                v = payload.get(key, 0)
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise BadPayload(f"cmd_vel field {key!r} must be numeric")
                vals[key] = float(v)
            return VelocityCmd(**vals)
        raise BadPayload(f"cmd_vel payload must be a number or object, got {type(payload).__name__}")
    raise UnknownCommandTopic(topic)


# -------------------------------------------------------------------- state


MODE_LANDED = "landed"
MODE_FLYING = "flying"
MODE_DEPLETED = "depleted"


@dataclass
class DroneState:
    t: float = 0.0
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    battery: float = 1.0
    mode: str = MODE_LANDED
    yaw_rate: float = 0.0  # rad/s; smoothed like the linear velocity

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    def telemetry(self) -> dict:
        return {
            "t": self.t,
            "position": [float(x) for x in self.position],
            "yaw": self.yaw,
            "battery": self.battery,
            "mode": self.mode,
        }


def _clamp_speed(v: np.ndarray, max_speed: float) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    while norm > max_speed:
        v = v * (max_speed / norm)
        norm = float(np.linalg.norm(v))
    return v


def step(state: DroneState, cmd: CommandInput | None, cfg: SimConfig) -> DroneState:
    """Advance the state by one dt under the active command.

    `cmd` is the latched setpoint for this tick (the caller keeps the last
    received command active); None means no setpoint, i.e. decay to hover.
    Total function: every input yields a valid successor state.
    """
    dt = cfg.dt
    t = state.t + dt

    if state.mode == MODE_LANDED:
        if isinstance(cmd, Takeoff) and state.battery > 0:
            state = replace(
                state,
                position=state.position.copy(),
                velocity=state.velocity.copy(),
                mode=MODE_FLYING,
            )
        else:
            return DroneState(
                t, state.position.copy(), np.zeros(3), state.yaw, state.battery, MODE_LANDED
            )

    battery = state.battery
    mode = state.mode
    if mode == MODE_FLYING:
        battery = max(0.0, battery - dt / cfg.battery_duration)
        if battery == 0.0:
            mode = MODE_DEPLETED

    alpha = dt / cfg.velocity_time_constant
    velocity = state.velocity.copy()
    wz_cmd = 0.0
    snapped = False

    if mode == MODE_DEPLETED:
        # dead stick: horizontal drift decays, forced descent
        velocity[:2] += alpha * -velocity[:2]
        velocity[2] = -cfg.landing_rate
        if state.position[2] <= 0:
            velocity[:] = 0.0
    elif isinstance(cmd, Takeoff):
        velocity[:2] += alpha * -velocity[:2]
        remaining = cfg.takeoff_hover - state.position[2]
        if remaining > 1e-3:
            # ease out near the hover altitude so the climb has no velocity step
            velocity[2] = min(cfg.takeoff_climb_rate, remaining / cfg.velocity_time_constant)
        else:
            velocity[2] = 0.0
            snapped = True
    elif isinstance(cmd, Land):
        velocity[:2] += alpha * -velocity[:2]
        velocity[2] = -cfg.landing_rate
    else:
        setpoint = cmd if isinstance(cmd, VelocityCmd) else VelocityCmd()
        v_body = np.array([setpoint.vx, setpoint.vy, setpoint.vz]) * cfg.max_speed
        v_cmd = _clamp_speed(rotz(state.yaw) @ v_body, cfg.max_speed)
        velocity += alpha * (v_cmd - velocity)
        wz_cmd = setpoint.wz

    yaw_rate = state.yaw_rate + alpha * (wz_cmd - state.yaw_rate)
    yaw = state.yaw + yaw_rate * dt
    velocity = _clamp_speed(velocity, cfg.max_speed)
    position = state.position + velocity * dt

    if snapped:
        position[2] = cfg.takeoff_hover
    if position[2] <= 0.0:
        position[2] = 0.0
        if velocity[2] < 0.0:
            velocity[2] = 0.0
        if isinstance(cmd, Land) and mode == MODE_FLYING:
            return DroneState(t, position, np.zeros(3), yaw, battery, MODE_LANDED, 0.0)
        if mode == MODE_DEPLETED:
            velocity[:] = 0.0
    if position[2] > cfg.max_altitude:
        position[2] = cfg.max_altitude
        if velocity[2] > 0.0:
            velocity[2] = 0.0

    return DroneState(t, position, velocity, yaw, battery, mode, yaw_rate)


# -------------------------------------------------------------------- scene


@dataclass
class Landmark:
    id: int
    pos: np.ndarray
    brightness: float

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness must be in [0, 1]")


@dataclass
class Scene:
    landmarks: list
    bounds_min: np.ndarray
    bounds_max: np.ndarray

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float).reshape(3)
        ids = [lm.id for lm in self.landmarks]
        if len(ids) != len(set(ids)):
            raise ValueError("landmark ids must be unique")
        for lm in self.landmarks:
            if np.any(lm.pos < self.bounds_min) or np.any(lm.pos > self.bounds_max):
                raise ValueError(f"landmark {lm.id} outside bounds")

    def positions(self) -> np.ndarray:
        return np.array([lm.pos for lm in self.landmarks]).reshape(-1, 3)

    def brightnesses(self) -> np.ndarray:
        return np.array([lm.brightness for lm in self.landmarks])

    def to_json(self) -> str:
        return json.dumps(
            {
                "bounds": {"min": list(self.bounds_min), "max": list(self.bounds_max)},
                "landmarks": [
                    {"id": lm.id, "pos": [float(x) for x in lm.pos], "brightness": lm.brightness}
                    for lm in self.landmarks
                ],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text) -> "Scene":
        obj = json.loads(text)
        return Scene(
            landmarks=[
                Landmark(lm["id"], lm["pos"], lm["brightness"]) for lm in obj["landmarks"]
            ],
            bounds_min=obj["bounds"]["min"],
            bounds_max=obj["bounds"]["max"],
        )

    @staticmethod
    def load(path) -> "Scene":
        with open(path, "r", encoding="utf-8") as fh:
            return Scene.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def default_scene(seed: int = 0, n_landmarks: int = 200) -> Scene:
    """Seeded box arena: landmark clusters in a hollow shell around the
    flight volume.

    Two properties matter for the mapping pipeline.  Landmarks come in
    small clusters so each dot has a locally unique constellation (a lone
    dot looks like every other lone dot to any local descriptor), with the
    cluster spread varied so some structure lands inside the descriptor
    patch at any viewing distance.  And the shell fills a depth range in
    every view: a wall-only (planar) scene makes the essential matrix
    degenerate.
    """
    rng = np.random.default_rng(seed)
    half, height = 6.0, 4.0
    center = np.array([2.5, 0.0, 1.2])   # mapping target, circled by the orbit mission
    radius_xy, half_z = 1.4, 0.75
    landmarks = []
    while len(landmarks) < n_landmarks:
        # cluster center inside the target cylinder
        cx, cy = rng.uniform(-radius_xy, radius_xy, size=2)
        if cx * cx + cy * cy > radius_xy * radius_xy:
            continue
        cz = rng.uniform(-half_z, half_z)
        spread = float(np.exp(rng.uniform(np.log(0.03), np.log(0.12))))
        for _ in range(int(rng.integers(3, 6))):
            if len(landmarks) >= n_landmarks:
                break
            pos = center + [cx, cy, cz] + rng.normal(0.0, spread, size=3)
            pos[0] = np.clip(pos[0], -(half - 0.1), half - 0.1)
            pos[1] = np.clip(pos[1], -(half - 0.1), half - 0.1)
            pos[2] = np.clip(pos[2], 0.1, height - 0.1)
            landmarks.append(Landmark(len(landmarks), pos, float(rng.uniform(0.5, 1.0))))
    return Scene(
        landmarks=landmarks,
        bounds_min=np.array([-half, -half, 0.0]),
        bounds_max=np.array([half, half, height]),
    )


# ---------------------------------------------------------------- rendering


@dataclass
class ImageFrame:
    t: float
    pixels: np.ndarray            # (height, width) uint8
    true_pose: SE3                # world-to-camera, ground truth

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def render_frame(state: DroneState, scene: Scene, cam: CameraIntrinsics) -> ImageFrame:
    """Project landmarks through the drone's forward camera and rasterize.

    Each visible landmark becomes a brightness-scaled 5x5 Gaussian dot at
    its subpixel projection; landmarks behind the camera or whose center
    falls off-image are culled.
    """
    pose = camera_from_yaw(state.position, state.yaw)
    pixels = np.full((cam.height, cam.width), BACKGROUND, dtype=np.uint8)
    if scene.landmarks:
        pts_cam = pose.act(scene.positions())
        bright = scene.brightnesses()
        visible = pts_cam[:, 2] > MIN_DEPTH
        if np.any(visible):
            uv = cam.project(pts_cam[visible])
            bright = bright[visible]
            centers = np.rint(uv).astype(int)
            inside = (
                (centers[:, 0] >= 0)
                & (centers[:, 0] <= cam.width - 1)
                & (centers[:, 1] >= 0)
                & (centers[:, 1] <= cam.height - 1)
            )
            span = np.arange(-DOT_RADIUS, DOT_RADIUS + 1)
            inv2s2 = 1.0 / (2.0 * DOT_SIGMA**2)
            for (u, v), (ui, vi), b in zip(uv[inside], centers[inside], bright[inside]):
                x0, x1 = max(ui - DOT_RADIUS, 0), min(ui + DOT_RADIUS, cam.width - 1)
                y0, y1 = max(vi - DOT_RADIUS, 0), min(vi + DOT_RADIUS, cam.height - 1)
                gx = np.exp(-((span[x0 - ui + DOT_RADIUS : x1 - ui + DOT_RADIUS + 1] + ui - u) ** 2) * inv2s2)
                gy = np.exp(-((span[y0 - vi + DOT_RADIUS : y1 - vi + DOT_RADIUS + 1] + vi - v) ** 2) * inv2s2)
                patch = pixels[y0 : y1 + 1, x0 : x1 + 1] + DOT_AMPLITUDE * b * np.outer(gy, gx)
                pixels[y0 : y1 + 1, x0 : x1 + 1] = np.minimum(patch, 255.0).astype(np.uint8)
    return ImageFrame(t=state.t, pixels=pixels, true_pose=pose)


def frame_to_payload(frame: ImageFrame) -> dict:
    """Bus payload for one frame.

    Raw 720p grayscale is ~900 KiB and its base64 form would blow the bus's
    1 MiB payload cap, so the pixel buffer travels zlib-compressed.
    """
    raw = zlib.compress(frame.pixels.tobytes(), level=1)
    return {
        "t": frame.t,
        "width": frame.width,
        "height": frame.height,
        "encoding": "zlib",
        "data": base64.b64encode(raw).decode("ascii"),
    }


def payload_to_frame(payload: dict) -> ImageFrame:
    data = base64.b64decode(payload["data"])
    if payload.get("encoding") == "zlib":
        data = zlib.decompress(data)
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(payload["height"], payload["width"])
    return ImageFrame(t=payload["t"], pixels=pixels, true_pose=SE3.identity())


def ground_truth_payload(state: DroneState) -> dict:
    """Camera-in-world pose for trajectory evaluation."""
    pose = camera_from_yaw(state.position, state.yaw)
    cam_in_world = pose.inverse()
    q = quat_from_rot(cam_in_world.R)
    return {
        "t": state.t,
        "position": [float(x) for x in cam_in_world.t],
        "quaternion": [float(x) for x in q],
    }


# ------------------------------------------------------------------ sim node


class DroneSim:
    """Simulator node: consumes command topics, emits telemetry and frames.

    tick() advances exactly one dt and is what standalone runs drive
    directly; run()/start() wrap it with wall-clock pacing for live mode.
    Frames go to in-process `frame_sinks` always, and to the /tello/image
    topic when `publish_images` is set.
    """

    ODOM_PERIOD = 0.1  # s

    def __init__(
        self,
        bus,
        scene: Scene,
        cfg: SimConfig | None = None,
        frame_rate: float = 10.0,
        cmd_prefix: str = "/tello",
        publish_images: bool = True,
        frame_sinks: list | None = None,
    ):
        self.bus = bus
        self.scene = scene
        self.cfg = cfg if cfg is not None else SimConfig()
        self.state = DroneState()
        self.cmd_prefix = cmd_prefix
        self.publish_images = publish_images
        self.frame_sinks = list(frame_sinks or [])
        self._active_cmd: CommandInput | None = None
        self._odom_every = max(1, round(self.ODOM_PERIOD / self.cfg.dt))
        self._frame_every = max(1, round(1.0 / (frame_rate * self.cfg.dt)))
        self._ticks = 0
        self._subs = [
            bus.subscribe(f"{cmd_prefix}/takeoff"),
            bus.subscribe(f"{cmd_prefix}/land"),
            bus.subscribe(f"{cmd_prefix}/cmd_vel"),
        ]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _drain_commands(self) -> None:
        for sub in self._subs:
            for payload in sub.drain():
                try:
                    cmd = ingest_command(payload, sub.topic, self.cmd_prefix)
                except BadPayload:
                    continue  # bad commands are dropped, flight goes on
                if isinstance(cmd, Takeoff) and self.state.mode != MODE_LANDED:
                    continue
                if isinstance(cmd, VelocityCmd) and self.state.mode == MODE_LANDED:
                    continue
                self._active_cmd = cmd

    def tick(self) -> None:
        """One dt of simulation: ingest commands, step dynamics, publish."""
        self._drain_commands()
        self.state = step(self.state, self._active_cmd, self.cfg)
        if self.state.mode == MODE_LANDED and isinstance(self._active_cmd, Land):
            self._active_cmd = None
        self._ticks += 1
        if self._ticks % self._odom_every == 0:
            self.bus.publish(f"{self.cmd_prefix}/odom", self.state.telemetry())
        if self._ticks % self._frame_every == 0:
            frame = render_frame(self.state, self.scene, self.cfg.camera)
            for sink in self.frame_sinks:
                sink(frame)
            if self.publish_images:
                self.bus.publish(f"{self.cmd_prefix}/image", frame_to_payload(frame))
            self.bus.publish(f"{self.cmd_prefix}/ground_truth", ground_truth_payload(self.state))

    def run(self) -> None:
        """Real-time loop at cfg.dt until stop() is called."""
        clock = WallClock()
        next_tick = clock.now()
        while not self._stop.is_set():
            self.tick()
            next_tick += self.cfg.dt
            lag = next_tick - clock.now()
            if lag > 0:
                self._stop.wait(lag)

    def start(self) -> "DroneSim":
        self._thread = threading.Thread(target=self.run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
