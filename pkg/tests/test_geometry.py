"""SE3 algebra, quaternions, camera model."""

import numpy as np
import pytest

from blockdrone.geometry import (
    SE3,
    CameraIntrinsics,
    camera_from_yaw,
    hat,
    orthonormalize,
    quat_from_rot,
    rot_from_quat,
    rotz,
    so3_exp,
)


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, np.pi))


def test_hat_is_cross_product():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(hat(a) @ b, np.cross(a, b))


def test_so3_exp_small_angle_and_orthonormal():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = rng.normal(size=3) * rng.choice([1e-14, 0.1, 1.0, 3.0])
        R = so3_exp(w)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_quaternion_roundtrip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        R = random_rotation(rng)
        q = quat_from_rot(R)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rot_from_quat(q), R, atol=1e-10)


def test_se3_compose_inverse_act():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = SE3(random_rotation(rng), rng.normal(size=3))
        b = SE3(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(10, 3))
        assert np.allclose(a.compose(b).act(pts), a.act(b.act(pts)))
        assert np.allclose(a.compose(a.inverse()).matrix(), np.eye(4), atol=1e-12)
        assert np.allclose(a.inverse().act(a.act(pts)), pts, atol=1e-10)


def test_se3_exp_matches_matrix_exponential():
    from scipy.linalg import expm

    rng = np.random.default_rng(4)
    for _ in range(20):
        xi = rng.normal(size=6)
        T = SE3.exp(xi).matrix()
        M = np.zeros((4, 4))
        M[:3, :3] = hat(xi[3:])
        M[:3, 3] = xi[:3]
        assert np.allclose(T, expm(M), atol=1e-9)


def test_orthonormalize_projects_back():
    rng = np.random.default_rng(5)
    R = random_rotation(rng)
    noisy = R + rng.normal(scale=1e-6, size=(3, 3))
    fixed = orthonormalize(noisy)
    assert np.linalg.norm(fixed.T @ fixed - np.eye(3)) < 1e-12
    assert np.allclose(fixed, R, atol=1e-5)


def test_camera_from_yaw_axes():
    # yaw 0 looks along +x, image-down is world -z
    pose = camera_from_yaw(np.zeros(3), 0.0)
    fwd = pose.R.T @ np.array([0, 0, 1.0])
    down = pose.R.T @ np.array([0, 1.0, 0])
    assert np.allclose(fwd, [1, 0, 0], atol=1e-12)
    assert np.allclose(down, [0, 0, -1], atol=1e-12)
    assert np.linalg.det(pose.R) == pytest.approx(1.0)


def test_camera_from_yaw_projection_sanity():
    cam = CameraIntrinsics()
    pose = camera_from_yaw(np.array([0.0, 0.0, 1.0]), 0.0)
    # point straight ahead at eye level hits the principal point
    uv = cam.project(pose.act(np.array([5.0, 0.0, 1.0])))
    assert np.allclose(uv, [cam.cx, cam.cy], atol=1e-9)
    # point to the left of the heading appears left in the image (smaller u)
    uv_left = cam.project(pose.act(np.array([5.0, 1.0, 1.0])))
    assert uv_left[0] < cam.cx
    # point above appears higher in the image (smaller v)
    uv_up = cam.project(pose.act(np.array([5.0, 0.0, 2.0])))
    assert uv_up[1] < cam.cy


def test_rotz_matches_so3_exp():
    for yaw in (0.0, 0.3, -1.2, np.pi):
        assert np.allclose(rotz(yaw), so3_exp(np.array([0, 0, yaw])), atol=1e-12)


def test_normalize_project_inverse():
    cam = CameraIntrinsics()
    rng = np.random.default_rng(6)
    pts = rng.uniform([-3, -2, 2], [3, 2, 9], size=(50, 3))
    uv = cam.project(pts)
    xn = cam.normalize(uv)
    assert np.allclose(xn, pts[:, :2] / pts[:, 2:3], atol=1e-12)
