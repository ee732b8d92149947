"""Pose optimization oracles: finite-difference Jacobians, convergence."""

import numpy as np
import pytest

from blockdrone.geometry import SE3, CameraIntrinsics, so3_exp
from blockdrone.slam.tracking import (
    TrackingLost,
    optimize_pose,
    reprojection_residuals,
    track_frame,
)

CAM = CameraIntrinsics()


def random_pose_and_points(rng, n=40):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = so3_exp(axis * rng.uniform(0, 0.5))
    C = rng.normal(size=3) * 0.5
    pose = SE3(R, -R @ C)
    pts = []
    while len(pts) < n:
        u = rng.uniform(60, CAM.width - 60)
        v = rng.uniform(60, CAM.height - 60)
        z = rng.uniform(3.0, 10.0)
        p_cam = np.array([(u - CAM.cx) / CAM.fx * z, (v - CAM.cy) / CAM.fy * z, z])
        pts.append(pose.inverse().act(p_cam))
    return pose, np.array(pts)


def test_jacobian_matches_central_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        pose, pts = random_pose_and_points(rng, n=1)
        pixel = CAM.project(pose.act(pts[0])) + rng.normal(size=2)
        _, J = reprojection_residuals(pose, pts, pixel[None, :], CAM)
        J = J[0]
        J_fd = np.zeros((2, 6))
        for k in range(6):
            xi = np.zeros(6)
            xi[k] = h
            r_plus, _ = reprojection_residuals(
                SE3.exp(xi).compose(pose), pts, pixel[None, :], CAM
            )
            r_minus, _ = reprojection_residuals(
                SE3.exp(-xi).compose(pose), pts, pixel[None, :], CAM
            )
            J_fd[:, k] = (r_plus[0] - r_minus[0]) / (2 * h)
        assert np.linalg.norm(J - J_fd) / max(1.0, np.linalg.norm(J_fd)) < 1e-5


def test_gauss_newton_converges_from_perturbed_pose():
    rng = np.random.default_rng(1)
    for trial in range(10):
        pose_true, pts = random_pose_and_points(rng, n=50)
        pixels = CAM.project(pose_true.act(pts))
        # perturb by 0.1 m translation and 5 degrees rotation
        dv = rng.normal(size=3)
        dv = 0.1 * dv / np.linalg.norm(dv)
        dw = rng.normal(size=3)
        dw = np.radians(5.0) * dw / np.linalg.norm(dw)
        pose_init = SE3.exp(np.concatenate([dv, dw])).compose(pose_true)
        pose_opt = optimize_pose(pose_init, pts, pixels, CAM)
        # compare camera centers and rotations
        assert np.linalg.norm(pose_opt.center() - pose_true.center()) < 1e-6
        assert np.linalg.norm(pose_opt.R - pose_true.R) < 1e-6


def test_optimized_rotation_stays_orthonormal():
    rng = np.random.default_rng(2)
    pose_true, pts = random_pose_and_points(rng, n=30)
    pixels = CAM.project(pose_true.act(pts))
    pose_init = SE3.exp(np.array([0.05, -0.02, 0.08, 0.02, -0.01, 0.03])).compose(pose_true)
    pose_opt = optimize_pose(pose_init, pts, pixels, CAM)
    assert np.linalg.norm(pose_opt.R.T @ pose_opt.R - np.eye(3)) < 1e-9


def test_huber_downweights_outliers():
    rng = np.random.default_rng(3)
    pose_true, pts = random_pose_and_points(rng, n=60)
    pixels = CAM.project(pose_true.act(pts))
    pixels_bad = pixels.copy()
    pixels_bad[:6] += rng.uniform(40, 80, size=(6, 2))  # 10% gross outliers
    pose_init = SE3.exp(np.array([0.03, 0.01, -0.02, 0.01, 0.02, -0.01])).compose(pose_true)
    pose_opt = optimize_pose(pose_init, pts, pixels_bad, CAM)
    # Huber keeps the solution close to truth despite the corrupted points
    assert np.linalg.norm(pose_opt.center() - pose_true.center()) < 5e-3


def test_track_frame_raises_without_enough_points():
    from blockdrone.slam.features import FrameFeatures

    with pytest.raises(TrackingLost):
        track_frame(
            SE3.identity(),
            np.zeros((0, 3)),
            np.zeros((0, 4), dtype=np.uint64),
            FrameFeatures.empty(),
            CAM,
        )
