"""Rigid-body and camera geometry shared across the stack.

Conventions:
  * world frame: z up; drone yaw measured about +z from the +x axis
  * camera frame: x right, y down, z forward (optical axis)
  * SE3 stores the world-to-camera map  x_cam = R @ x_world + t
  * quaternions are (qx, qy, qz, qw), unit norm
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector (so [w]x @ v == w x v)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + hat(w)
    K = hat(w / theta)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (inverse of so3_exp)."""
    R = np.asarray(R, dtype=float)
    cos_theta = max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-10:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta > math.pi - 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the off-diagonal terms
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k and A[k, i] < 0:
                    axis[i] = -axis[i]
        axis /= max(np.linalg.norm(axis), 1e-300)
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * theta / (2.0 * math.sin(theta))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (closest in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class SE3:
    """World-to-camera rigid transform."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @staticmethod
    def identity() -> "SE3":
        return SE3()

    @staticmethod
    def exp(xi: np.ndarray) -> "SE3":
        """Exponential map from a twist (vx, vy, vz, wx, wy, wz)."""
        v, w = np.asarray(xi[:3], dtype=float), np.asarray(xi[3:], dtype=float)
        theta = np.linalg.norm(w)
        R = so3_exp(w)
        if theta < 1e-12:
            V = np.eye(3) + 0.5 * hat(w)
        else:
            K = hat(w / theta)
            V = (
                np.eye(3)
                + (1.0 - math.cos(theta)) / theta * K
                + (theta - math.sin(theta)) / theta * (K @ K)
            )
        return SE3(R, V @ v)

    def log(self) -> np.ndarray:
        """Twist (vx, vy, vz, wx, wy, wz) with SE3.exp(T.log()) == T."""
        w = so3_log(self.R)
        theta = np.linalg.norm(w)
        if theta < 1e-10:
            V_inv = np.eye(3) - 0.5 * hat(w)
        else:
            K = hat(w / theta)
            half = theta / 2.0
            cot = 1.0 / math.tan(half)
            V_inv = np.eye(3) - half * K + (1.0 - half * cot) * (K @ K)
        return np.concatenate([V_inv @ self.t, w])

    def compose(self, other: "SE3") -> "SE3":
        """self ∘ other: apply `other` first."""
        return SE3(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "SE3":
        Rt = self.R.T
        return SE3(Rt, -Rt @ self.t)

    def act(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (..., 3) into the camera frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t

    def center(self) -> np.ndarray:
        """Camera center expressed in world coordinates."""
        return -self.R.T @ self.t

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def orthonormalized(self) -> "SE3":
        return SE3(orthonormalize(self.R), self.t.copy())

    def rotation_error(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - np.eye(3)))

    def copy(self) -> "SE3":
        return SE3(self.R.copy(), self.t.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SE3)
            and bool(np.array_equal(self.R, other.R))
            and bool(np.array_equal(self.t, other.t))
        )


def quat_from_rot(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (qx, qy, qz, qw), qw >= 0."""
    m = np.asarray(R, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rot_from_quat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) to rotation matrix."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass
class CameraIntrinsics:
    """Pinhole model; defaults give ~70 deg horizontal FOV at 720p."""

    fx: float = 920.0
    fy: float = 920.0
    cx: float = 640.0
    cy: float = 360.0
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points (..., 3) to pixel coordinates (..., 2)."""
        pts = np.asarray(pts_cam, dtype=float)
        z = pts[..., 2]
        u = self.fx * pts[..., 0] / z + self.cx
        v = self.fy * pts[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def normalize(self, pixels: np.ndarray) -> np.ndarray:
        """Pixel coordinates (..., 2) to normalized image coordinates."""
        px = np.asarray(pixels, dtype=float)
        x = (px[..., 0] - self.cx) / self.fx
        y = (px[..., 1] - self.cy) / self.fy
        return np.stack([x, y], axis=-1)

    def inside(self, pixels: np.ndarray, margin: float = 0.0) -> np.ndarray:
        px = np.asarray(pixels, dtype=float)
        return (
            (px[..., 0] >= margin)
            & (px[..., 0] <= self.width - 1 - margin)
            & (px[..., 1] >= margin)
            & (px[..., 1] <= self.height - 1 - margin)
        )


def camera_from_yaw(position: np.ndarray, yaw: float) -> SE3:
    """World-to-camera pose of a forward-looking camera at `position`.

    The optical axis points along the vehicle heading (cos yaw, sin yaw, 0)
    and image-down is world-down.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    # camera axes expressed in world coordinates
    z_cam = np.array([c, s, 0.0])       # forward
    y_cam = np.array([0.0, 0.0, -1.0])  # down
    x_cam = np.array([s, -c, 0.0])      # right
    R_wc = np.column_stack([x_cam, y_cam, z_cam])
    R = R_wc.T
    return SE3(R, -R @ np.asarray(position, dtype=float))
