"""Monocular mapping pipeline: initialization, tracking, keyframes, export.

State machine per frame:

  uninitialized --(two-view init against a buffered reference)--> tracking
  tracking      --(track_frame, keyframe policy, new triangulations)-->
  lost          --(fresh sub-map: back to uninitialized)

Gauge convention: the first keyframe of every sub-map is the identity and
the initial baseline has unit norm.  Monocular scale is arbitrary, so all
evaluation happens after Sim(3) alignment downstream.  Map points are
triangulated once and never moved (no bundle adjustment here), so the map
only grows between resets.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..geometry import SE3, CameraIntrinsics, quat_from_rot
from ..mapeval import PointCloud, Trajectory, TrajectoryPose
from ..sim import ImageFrame, payload_to_frame
from .features import FrameFeatures, detect_features
from .matching import match_features
from .tracking import TrackingLost, track_frame
from .twoview import TwoViewError, estimate_two_view, triangulate_batch

STATE_UNINITIALIZED = "uninitialized"
STATE_TRACKING = "tracking"
STATE_LOST = "lost"


class OutOfOrderFrame(ValueError):
    pass


@dataclass
class SlamConfig:
    target_features: int = 400
    min_init_matches: int = 8
    min_init_points: int = 20
    keyframe_interval: int = 20       # frames between keyframes, at most
    min_keyframe_gap: int = 6         # and at least this many frames apart
    reobserved_fraction: float = 0.6  # view coverage below this asks for a keyframe
    min_track_inliers: int = 15
    track_inlier_px: float = 3.0
    seed: int = 0


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    descriptor: np.ndarray
    observations: int = 2
    sub_map: int = 0


@dataclass
class Keyframe:
    t: float
    pose: SE3                        # world-to-camera
    features: FrameFeatures
    point_ids: dict = field(default_factory=dict)   # keypoint index -> map point id
    sub_map: int = 0


class SlamMap:
    """Map points + keyframes + tracking state; snapshot-safe for export."""

    def __init__(self, cam: CameraIntrinsics, config: SlamConfig | None = None):
        self.cam = cam
        self.config = config if config is not None else SlamConfig()
        self.points: dict[int, MapPoint] = {}
        self.keyframes: list[Keyframe] = []
        self.state = STATE_UNINITIALIZED
        self.sub_map = 0
        self.rng = np.random.default_rng(self.config.seed)
        self.reference: FrameFeatures | None = None
        self.last_pose = SE3.identity()
        self.last_pose_t = 0.0
        self.velocity_rate = np.zeros(6)   # twist/s of the world-to-camera pose
        self.frames_since_keyframe = 0
        self.last_t: float | None = None
        self._next_point_id = 0
        self._last_pixels: np.ndarray | None = None
        self._last_features: FrameFeatures | None = None
        self._lock = threading.Lock()

    def lock(self):
        return self._lock

    def point_arrays(self, sub_map: int | None = None):
        """Positions (N,3), descriptors (N,4) and ids, in id order.

        Tracking must pass the current sub_map: points from earlier sub-maps
        live in a different gauge and would poison the associations.
        """
        ids = sorted(
            i for i, p in self.points.items() if sub_map is None or p.sub_map == sub_map
        )
        if not ids:
            return [], np.zeros((0, 3)), np.zeros((0, 4), dtype=np.uint64)
        pos = np.stack([self.points[i].position for i in ids])
        desc = np.stack([self.points[i].descriptor for i in ids])
        return ids, pos, desc

    def _add_point(self, position, descriptor) -> int:
        pid = self._next_point_id
        self._next_point_id += 1
        self.points[pid] = MapPoint(pid, np.asarray(position, float), descriptor.copy(),
                                    observations=2, sub_map=self.sub_map)
        return pid


@dataclass
class FrameResult:
    """What one processed frame did to the map."""

    t: float
    event: str                        # buffered | init_failed | initialized |
    #                                   tracked | keyframe | lost | reset
    pose: SE3 | None = None           # world-to-camera when tracked
    new_point_ids: list = field(default_factory=list)
    n_inliers: int = 0


def process_frame(slam: SlamMap, img: ImageFrame, cam: CameraIntrinsics | None = None) -> FrameResult:
    """Advance the map with one frame (frames must arrive in time order)."""
    cam = cam if cam is not None else slam.cam
    if slam.last_t is not None and img.t <= slam.last_t:
        raise OutOfOrderFrame(f"frame t={img.t} after t={slam.last_t}")
    slam.last_t = img.t
    # hovering produces byte-identical frames; detection is pure, reuse it
    if slam._last_pixels is not None and np.array_equal(slam._last_pixels, img.pixels):
        prev = slam._last_features
        features = FrameFeatures(img.t, prev.xy, prev.scores, prev.angles, prev.descriptors)
    else:
        features = detect_features(img, slam.config.target_features, t=img.t)
        slam._last_pixels = img.pixels
        slam._last_features = features

    with slam.lock():
        if slam.state == STATE_LOST:
            # fresh sub-map; old points and keyframes stay for export
            slam.state = STATE_UNINITIALIZED
            slam.sub_map += 1
            slam.reference = None
        if slam.state == STATE_UNINITIALIZED:
            return _try_initialize(slam, features, cam)
        return _track(slam, features, cam)


def _try_initialize(slam: SlamMap, features: FrameFeatures, cam) -> FrameResult:
    cfg = slam.config
    if slam.reference is None or len(slam.reference) < cfg.min_init_matches:
        slam.reference = features
        return FrameResult(features.t, "buffered")
    ref = slam.reference
    # looser ratio than the matcher default: ambiguous pairs cost nothing
    # here because RANSAC arbitrates them anyway
    matches = match_features(ref, features, ratio=FRESH_MATCH_RATIO)
    if len(matches) < cfg.min_init_matches:
        slam.reference = features  # scene changed too much; re-anchor
        return FrameResult(features.t, "buffered")
    px_ref = ref.xy[matches[:, 0]]
    px_cur = features.xy[matches[:, 1]]
    try:
        pose, inlier_mask = estimate_two_view(px_ref, px_cur, cam, rng=slam.rng)
    except TwoViewError:
        return FrameResult(features.t, "init_failed")

    identity = SE3.identity()
    sel = np.nonzero(inlier_mask)[0]
    pts, keep = triangulate_batch(
        identity, pose, px_ref[inlier_mask], px_cur[inlier_mask], cam
    )
    if len(pts) < cfg.min_init_points:
        return FrameResult(features.t, "init_failed")

    kf0 = Keyframe(ref.t, identity, ref, sub_map=slam.sub_map)
    kf1 = Keyframe(features.t, pose.copy(), features, sub_map=slam.sub_map)
    new_ids = []
    for row, X in zip(sel[keep], pts):
        i_ref, i_cur = matches[row]
        pid = slam._add_point(X, features.descriptors[i_cur])
        kf0.point_ids[int(i_ref)] = pid
        kf1.point_ids[int(i_cur)] = pid
        new_ids.append(pid)
    slam.keyframes.extend([kf0, kf1])
    slam.state = STATE_TRACKING
    slam.last_pose = pose.copy()
    slam.last_pose_t = features.t
    span = max(features.t - ref.t, 1e-9)
    slam.velocity_rate = pose.log() / span  # baseline accrued over many frames
    slam.frames_since_keyframe = 0
    slam.reference = None
    return FrameResult(features.t, "initialized", pose=pose.copy(),
                       new_point_ids=new_ids, n_inliers=len(new_ids))


def _track(slam: SlamMap, features: FrameFeatures, cam) -> FrameResult:
    cfg = slam.config
    # constant-velocity prediction: integrate the per-second twist over the
    # (possibly irregular) gap since the last tracked frame
    gap = features.t - slam.last_pose_t
    predicted = SE3.exp(slam.velocity_rate * gap).compose(slam.last_pose).orthonormalized()
    ids, positions, descriptors = slam.point_arrays(sub_map=slam.sub_map)
    try:
        pose, m_idx, k_idx, inliers = track_frame(
            predicted, positions, descriptors, features, cam,
            min_inliers=cfg.min_track_inliers,
            inlier_px=cfg.track_inlier_px,
        )
    except TrackingLost:
        slam.state = STATE_LOST
        return FrameResult(features.t, "lost")

    delta = pose.compose(slam.last_pose.inverse())
    slam.velocity_rate = delta.log() / max(gap, 1e-9)
    slam.last_pose = pose.copy()
    slam.last_pose_t = features.t
    slam.frames_since_keyframe += 1
    n_inliers = int(inliers.sum())

    # keep map descriptors fresh: the viewing aspect drifts along the orbit
    # and a creation-time descriptor stops matching within a few degrees
    for m, k, ok in zip(m_idx, k_idx, inliers):
        if ok:
            slam.points[ids[int(m)]].descriptor = features.descriptors[int(k)].copy()

    # keyframe policy: how much of the current view do re-observed map
    # points explain?  Low coverage means the camera moved into terrain the
    # map has not triangulated yet, so a keyframe is due.
    reobserved = n_inliers / max(len(features), 1)
    due = (
        reobserved < cfg.reobserved_fraction
        or slam.frames_since_keyframe >= cfg.keyframe_interval
    )
    if not due or slam.frames_since_keyframe < cfg.min_keyframe_gap:
        return FrameResult(features.t, "tracked", pose=pose.copy(), n_inliers=n_inliers)

    new_ids = _insert_keyframe(slam, features, pose, ids, m_idx, k_idx, inliers, cam)
    return FrameResult(features.t, "keyframe", pose=pose.copy(),
                       new_point_ids=new_ids, n_inliers=n_inliers)


DEDUP_RADIUS_PX = 3.0
FRESH_MATCH_RATIO = 0.9  # unmapped pools are pre-filtered, gates catch the rest


def _insert_keyframe(slam, features, pose, ids, m_idx, k_idx, inliers, cam) -> list:
    kf = Keyframe(features.t, pose.copy(), features, sub_map=slam.sub_map)
    for m, k, ok in zip(m_idx, k_idx, inliers):
        if ok:
            pid = ids[int(m)]
            kf.point_ids[int(k)] = pid
            slam.points[pid].observations += 1

    # keypoints that sit on an already-mapped projection are re-sightings the
    # matcher missed, not new landmarks; triangulating them would bloat the map
    _, positions, _ = slam.point_arrays(sub_map=slam.sub_map)
    near_existing = np.zeros(len(features), dtype=bool)
    if len(positions):
        cam_pts = pose.act(positions)
        front = cam_pts[:, 2] > 0.1
        if front.any():
            uv = cam.project(cam_pts[front])
            d2 = ((features.xy[:, None, :] - uv[None, :, :]) ** 2).sum(axis=2)
            near_existing = d2.min(axis=1) < DEDUP_RADIUS_PX**2

    # triangulate fresh matches against the previous keyframe of this
    # sub-map, matching only the unmapped keypoint pools so already-mapped
    # twins cannot knock out their neighbors in the ratio test
    new_ids: list = []
    prev = next((k for k in reversed(slam.keyframes) if k.sub_map == slam.sub_map), None)
    if prev is not None and not np.array_equal(prev.pose.matrix(), pose.matrix()):
        free_prev = np.array(
            [i for i in range(len(prev.features)) if i not in prev.point_ids],
            dtype=np.int64,
        )
        free_cur = np.array(
            [
                j
                for j in range(len(features))
                if j not in kf.point_ids and not near_existing[j]
            ],
            dtype=np.int64,
        )
        if len(free_prev) and len(free_cur):
            sub_prev = _subset(prev.features, free_prev)
            sub_cur = _subset(features, free_cur)
            matches = match_features(sub_prev, sub_cur, ratio=FRESH_MATCH_RATIO)
            if len(matches):
                pi = free_prev[matches[:, 0]]
                ci = free_cur[matches[:, 1]]
                pts, keep = triangulate_batch(
                    prev.pose, pose, prev.features.xy[pi], features.xy[ci], cam
                )
                for i, j, X in zip(pi[keep], ci[keep], pts):
                    pid = slam._add_point(X, features.descriptors[int(j)])
                    prev.point_ids[int(i)] = pid
                    kf.point_ids[int(j)] = pid
                    new_ids.append(pid)
    slam.keyframes.append(kf)
    slam.frames_since_keyframe = 0
    return new_ids


def _subset(feats: FrameFeatures, idx: np.ndarray) -> FrameFeatures:
    return FrameFeatures(
        feats.t, feats.xy[idx], feats.scores[idx], feats.angles[idx], feats.descriptors[idx]
    )


def export_map(slam: SlamMap):
    """Snapshot the map as (PointCloud, Trajectory of camera-in-world poses)."""
    with slam.lock():
        ids, positions, _ = slam.point_arrays()
        poses = []
        for kf in slam.keyframes:
            cam_in_world = kf.pose.inverse()
            poses.append(
                TrajectoryPose(kf.t, cam_in_world.t.copy(), quat_from_rot(cam_in_world.R))
            )
    cloud = PointCloud(np.asarray(positions, dtype=np.float32).reshape(-1, 3))
    return cloud, Trajectory(poses)


class SlamNode:
    """Bus-facing wrapper: frames in, pose/map telemetry out.

    Consumes /tello/image payloads (or direct ImageFrames via process());
    publishes /slam/pose, /slam/map_size and incremental /slam/points.
    """

    def __init__(
        self,
        bus,
        cam: CameraIntrinsics,
        config: SlamConfig | None = None,
        topic_prefix: str = "/slam",
        image_topic: str = "/tello/image",
    ):
        self.bus = bus
        self.map = SlamMap(cam, config)
        self.prefix = topic_prefix
        self.image_topic = image_topic
        self._sub = None
        self._thread = None
        self._stop = threading.Event()

    def process(self, frame: ImageFrame) -> FrameResult:
        result = process_frame(self.map, frame)
        if result.pose is not None:
            cam_in_world = result.pose.inverse()
            self.bus.publish(
                f"{self.prefix}/pose",
                {
                    "t": result.t,
                    "position": [float(v) for v in cam_in_world.t],
                    "quaternion": [float(v) for v in quat_from_rot(cam_in_world.R)],
                    "inliers": result.n_inliers,
                },
            )
        self.bus.publish(
            f"{self.prefix}/map_size",
            {
                "t": result.t,
                "points": len(self.map.points),
                "keyframes": len(self.map.keyframes),
                "state": self.map.state,
            },
        )
        if result.new_point_ids:
            pts = [
                [float(v) for v in self.map.points[pid].position]
                for pid in result.new_point_ids
            ]
            self.bus.publish(
                f"{self.prefix}/points",
                {"t": result.t, "ids": result.new_point_ids, "points": pts},
            )
        return result

    # live-mode plumbing -------------------------------------------------

    def start(self) -> "SlamNode":
        self._sub = self.bus.subscribe(self.image_topic)
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                payload = self._sub.get(timeout=0.25)
            except TimeoutError:
                continue
            except Exception:
                return
            try:
                self.process(payload_to_frame(payload))
            except OutOfOrderFrame:
                continue

    def stop(self) -> None:
        self._stop.set()
        if self._sub is not None:
            self._sub.close()
        if self._thread is not None:
            self._thread.join(timeout=2)
