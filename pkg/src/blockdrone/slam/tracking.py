"""Motion-only pose tracking: windowed map-point matching + Gauss-Newton.

The pose update is left-multiplicative on SE(3): T <- exp(xi) T with
xi = (v, w).  For a camera point p = R X + t the residual of one map point
against its matched pixel is r = pi(p) - u, giving the standard 2x6
Jacobian  dpi/dp @ [I | -[p]x].  A Huber kernel (delta = 2 px) downweights
stragglers; iteration stops when the update norm drops below 1e-6.
"""

from __future__ import annotations

import numpy as np

from ..geometry import SE3, CameraIntrinsics, hat
from .features import FrameFeatures, hamming_matrix

HUBER_DELTA_PX = 2.0
MAX_GN_ITERATIONS = 10
GN_TOLERANCE = 1e-6
SEARCH_WINDOW_PX = 30.0
TRACK_MAX_HAMMING = 80
MIN_TRACK_INLIERS = 15
INLIER_PX = 2.0  # same scale as the Huber kernel; rendered dots land well under


class TrackingLost(RuntimeError):
    """Too few inlier correspondences to trust the pose."""


def reprojection_residuals(pose: SE3, points: np.ndarray, pixels: np.ndarray,
                           cam: CameraIntrinsics):
    """Residuals r = pi(R X + t) - u and their 2x6 Jacobians wrt exp(xi) T."""
    p = pose.act(points)                      # (N, 3) camera-frame
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    r = cam.project(p) - pixels               # (N, 2)

    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    J = np.zeros((len(points), 2, 6))
    # d pi / d p  composed with  d p / d xi = [I | -[p]x]
    J[:, 0, 0] = cam.fx * inv_z
    J[:, 0, 2] = -cam.fx * x * inv_z2
    J[:, 1, 1] = cam.fy * inv_z
    J[:, 1, 2] = -cam.fy * y * inv_z2
    # rotational block: dpi/dp @ (-[p]x)
    J[:, 0, 3] = -cam.fx * x * y * inv_z2
    J[:, 0, 4] = cam.fx * (1.0 + x * x * inv_z2)
    J[:, 0, 5] = -cam.fx * y * inv_z
    J[:, 1, 3] = -cam.fy * (1.0 + y * y * inv_z2)
    J[:, 1, 4] = cam.fy * x * y * inv_z2
    J[:, 1, 5] = cam.fy * x * inv_z
    return r, J


def huber_weights(residuals: np.ndarray, delta: float = HUBER_DELTA_PX) -> np.ndarray:
    """IRLS weights for the Huber kernel on per-point residual norms."""
    norms = np.linalg.norm(residuals, axis=1)
    w = np.ones(len(norms))
    big = norms > delta
    w[big] = delta / norms[big]
    return w


def optimize_pose(
    initial: SE3,
    points: np.ndarray,
    pixels: np.ndarray,
    cam: CameraIntrinsics,
    huber_delta: float = HUBER_DELTA_PX,
    max_iterations: int = MAX_GN_ITERATIONS,
    tolerance: float = GN_TOLERANCE,
) -> SE3:
    """Gauss-Newton on reprojection error over the 6-dof camera pose."""
    pose = initial.copy()
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    for _ in range(max_iterations):
        r, J = reprojection_residuals(pose, points, pixels, cam)
        w = huber_weights(r, huber_delta)
        Jw = J * w[:, None, None]
        H = np.einsum("nij,nik->jk", Jw, J)
        g = np.einsum("nij,ni->j", Jw, r)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        pose = SE3.exp(delta).compose(pose).orthonormalized()
        if np.linalg.norm(delta) < tolerance:
            break
    return pose


def match_map_points(
    predicted: SE3,
    map_positions: np.ndarray,
    map_descriptors: np.ndarray,
    frame: FrameFeatures,
    cam: CameraIntrinsics,
    window_px: float = SEARCH_WINDOW_PX,
    max_hamming: int = TRACK_MAX_HAMMING,
):
    """Associate map points with frame keypoints near their predicted pixel.

    Returns (map indices, keypoint indices), one-to-one, best Hamming first.
    """
    if len(map_positions) == 0 or len(frame) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    p = predicted.act(map_positions)
    vis = p[:, 2] > 0.1
    uv = np.zeros((len(p), 2))
    uv[vis] = cam.project(p[vis])
    vis &= cam.inside(uv, margin=0.0)
    vis_idx = np.nonzero(vis)[0]
    if len(vis_idx) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)

    d2 = ((uv[vis_idx, None, :] - frame.xy[None, :, :]) ** 2).sum(axis=2)
    near = d2 < window_px * window_px
    if not near.any():
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    ham = hamming_matrix(map_descriptors[vis_idx], frame.descriptors)
    ham = np.where(near, ham, np.iinfo(np.int64).max)

    mi, ki = np.nonzero(near & (ham < max_hamming))
    order = np.argsort(ham[mi, ki], kind="stable")
    used_m: set = set()
    used_k: set = set()
    out_m, out_k = [], []
    for idx in order:
        m, k = int(mi[idx]), int(ki[idx])
        if m in used_m or k in used_k:
            continue
        used_m.add(m)
        used_k.add(k)
        out_m.append(vis_idx[m])
        out_k.append(k)
    return np.array(out_m, dtype=np.int64), np.array(out_k, dtype=np.int64)


def track_frame(
    predicted: SE3,
    map_positions: np.ndarray,
    map_descriptors: np.ndarray,
    frame: FrameFeatures,
    cam: CameraIntrinsics,
    min_inliers: int = MIN_TRACK_INLIERS,
    inlier_px: float = INLIER_PX,
):
    """Track one frame against the map from a predicted pose.

    Returns (pose, map indices, keypoint indices, inlier mask) or raises
    TrackingLost when fewer than `min_inliers` correspondences survive the
    optimization.
    """
    m_idx, k_idx = match_map_points(predicted, map_positions, map_descriptors, frame, cam)
    if len(m_idx) < min_inliers:
        raise TrackingLost(f"only {len(m_idx)} map-point matches")
    pts = map_positions[m_idx]
    pix = frame.xy[k_idx]
    pose = optimize_pose(predicted, pts, pix, cam)
    r, _ = reprojection_residuals(pose, pts, pix, cam)
    inliers = np.linalg.norm(r, axis=1) < inlier_px
    if int(inliers.sum()) < min_inliers:
        raise TrackingLost(f"only {int(inliers.sum())} inliers after optimization")
    return pose, m_idx, k_idx, inliers
