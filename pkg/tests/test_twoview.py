"""Two-view geometry oracles: synthetic scenes with exact projections."""

import numpy as np
import pytest

from blockdrone.geometry import SE3, CameraIntrinsics, hat, so3_exp
from blockdrone.slam.twoview import (
    BehindCamera,
    HighResidual,
    InsufficientMatches,
    LowParallax,
    NoParallax,
    TwoViewError,
    eight_point,
    estimate_two_view,
    sampson_error,
    triangulate,
    triangulate_batch,
)

CAM = CameraIntrinsics()


def synthetic_pair(rng, n=80, rot_deg=5.0, baseline=(1.0, 0.0, 0.0)):
    """Exact two-view correspondences: world = camera a frame.

    Points are sampled in view a's frustum and kept only if visible in b.
    Returns (pose_b, px_a, px_b, pts).
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = so3_exp(axis * np.radians(rot_deg))
    C = np.asarray(baseline, dtype=float)
    pose_b = SE3(R, -R @ C)

    pts = []
    while len(pts) < n:
        u = rng.uniform(100, CAM.width - 100)
        v = rng.uniform(100, CAM.height - 100)
        z = rng.uniform(4.0, 10.0)
        p = np.array([(u - CAM.cx) / CAM.fx * z, (v - CAM.cy) / CAM.fy * z, z])
        q = pose_b.act(p)
        if q[2] < 0.5:
            continue
        uv_b = CAM.project(q)
        if 0 <= uv_b[0] < CAM.width and 0 <= uv_b[1] < CAM.height:
            pts.append(p)
    pts = np.array(pts)
    px_a = CAM.project(pts)
    px_b = CAM.project(pose_b.act(pts))
    return pose_b, px_a, px_b, pts


def essential_from_pose(pose: SE3) -> np.ndarray:
    E = hat(pose.t) @ pose.R
    return E / np.linalg.norm(E)


def assert_proportional(A, B, tol):
    A = A / np.linalg.norm(A)
    B = B / np.linalg.norm(B)
    assert min(np.linalg.norm(A - B), np.linalg.norm(A + B)) < tol


# ------------------------------------------------------------ eight point


def test_eight_point_recovers_closed_form_e():
    rng = np.random.default_rng(0)
    for trial in range(10):
        pose_b, px_a, px_b, _ = synthetic_pair(rng, n=40, rot_deg=rng.uniform(0, 15))
        E = eight_point(CAM.normalize(px_a), CAM.normalize(px_b))
        assert_proportional(E, essential_from_pose(pose_b), 1e-6)


def test_pure_x_translation_gives_canonical_e():
    rng = np.random.default_rng(1)
    _, px_a, px_b, _ = synthetic_pair(rng, n=60, rot_deg=0.0, baseline=(1.0, 0.0, 0.0))
    pose, mask = estimate_two_view(px_a, px_b, CAM, rng=np.random.default_rng(0))
    # x_b = x_a - (1,0,0): E ~ [t]x with t = (-1,0,0)
    E_expected = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    E_recovered = hat(pose.t) @ pose.R
    assert_proportional(E_recovered, E_expected, 1e-6)
    assert np.linalg.norm(pose.R - np.eye(3)) < 1e-6
    assert mask.all()


def test_estimate_two_view_recovers_pose_exactly():
    rng = np.random.default_rng(2)
    for trial in range(6):
        pose_b, px_a, px_b, _ = synthetic_pair(
            rng, n=60, rot_deg=rng.uniform(1, 10), baseline=tuple(rng.normal(size=3))
        )
        pose, mask = estimate_two_view(px_a, px_b, CAM, rng=np.random.default_rng(trial))
        assert mask.sum() == 60
        assert np.linalg.norm(pose.R - pose_b.R) < 1e-6
        t_true = pose_b.t / np.linalg.norm(pose_b.t)
        assert np.linalg.norm(pose.t - t_true) < 1e-6
        assert abs(np.linalg.norm(pose.t) - 1.0) < 1e-12


def test_epipolar_residual_machine_precision():
    rng = np.random.default_rng(3)
    pose_b, px_a, px_b, _ = synthetic_pair(rng, n=60, rot_deg=7.0, baseline=(0.5, 0.2, 0.1))
    pose, mask = estimate_two_view(px_a, px_b, CAM, rng=np.random.default_rng(0))
    E = hat(pose.t) @ pose.R
    x1 = CAM.normalize(px_a)
    x2 = CAM.normalize(px_b)
    h1 = np.hstack([x1, np.ones((len(x1), 1))])
    h2 = np.hstack([x2, np.ones((len(x2), 1))])
    residuals = np.abs(np.sum(h2 * (h1 @ E.T), axis=1))
    assert residuals.max() < 1e-10


def test_ransac_rejects_exactly_the_outliers():
    rng = np.random.default_rng(4)
    pose_b, px_a, px_b, _ = synthetic_pair(rng, n=100, rot_deg=4.0, baseline=(0.8, 0.1, 0.0))
    n_out = 30
    corrupt = rng.choice(100, size=n_out, replace=False)
    px_b_bad = px_b.copy()
    px_b_bad[corrupt] = rng.uniform([0, 0], [CAM.width, CAM.height], size=(n_out, 2))
    pose, mask = estimate_two_view(px_a, px_b_bad, CAM, rng=np.random.default_rng(0))
    expected = np.ones(100, dtype=bool)
    expected[corrupt] = False
    # brute-force check against the true geometry: every corrupted pixel
    # must sit far off its epipolar line, every clean one exactly on it
    E_true = essential_from_pose(pose_b)
    errs = sampson_error(E_true, CAM.normalize(px_a), CAM.normalize(px_b_bad))
    thr = (1.5 / CAM.fx) ** 2
    assert np.array_equal(errs < thr, expected)
    assert np.array_equal(mask, expected)
    assert np.linalg.norm(pose.R - pose_b.R) < 1e-6


def test_insufficient_matches():
    with pytest.raises(InsufficientMatches):
        estimate_two_view(np.zeros((5, 2)), np.zeros((5, 2)), CAM)


def test_zero_baseline_raises_no_parallax():
    rng = np.random.default_rng(5)
    pts = rng.uniform([-2, -2, 4], [2, 2, 9], size=(60, 3))
    px = CAM.project(pts)
    with pytest.raises((NoParallax, TwoViewError)):
        estimate_two_view(px, px.copy(), CAM, rng=np.random.default_rng(0))


# ---------------------------------------------------------- triangulation


def test_triangulate_forward_project_oracle():
    pose_a = SE3.identity()
    C_b = np.array([1.0, 0.0, 0.0])
    pose_b = SE3(np.eye(3), -C_b)
    X = np.array([0.0, 0.0, 5.0])
    pa = CAM.project(pose_a.act(X))
    pb = CAM.project(pose_b.act(X))
    rec = triangulate(pose_a, pose_b, pa, pb, CAM)
    assert np.linalg.norm(rec - X) / np.linalg.norm(X) < 1e-9


def test_triangulate_random_oracle():
    rng = np.random.default_rng(6)
    for _ in range(50):
        pose_b, px_a, px_b, pts = synthetic_pair(rng, n=1, rot_deg=rng.uniform(0, 10))
        rec = triangulate(SE3.identity(), pose_b, px_a[0], px_b[0], CAM)
        assert np.linalg.norm(rec - pts[0]) / np.linalg.norm(pts[0]) < 1e-9


def test_identical_poses_low_parallax():
    pose = SE3.identity()
    with pytest.raises(LowParallax):
        triangulate(pose, pose.copy(), np.array([640.0, 360.0]), np.array([640.0, 360.0]), CAM)


def test_corrupted_pixel_high_residual():
    # the baseline is along x, so the corruption must be off the (horizontal)
    # epipolar line: shifts along it just alias into a depth change
    pose_a = SE3.identity()
    pose_b = SE3(np.eye(3), -np.array([1.0, 0.0, 0.0]))
    X = np.array([0.3, -0.2, 6.0])
    pa = CAM.project(pose_a.act(X))
    pb = CAM.project(pose_b.act(X)) + np.array([0.0, 20.0])
    with pytest.raises(HighResidual):
        triangulate(pose_a, pose_b, pa, pb, CAM)


def test_point_behind_camera_rejected():
    # flipping the baseline sign mirrors the triangulation behind both views
    pose_a = SE3.identity()
    pose_b = SE3(np.eye(3), -np.array([1.0, 0.0, 0.0]))
    X = np.array([0.3, -0.2, 6.0])
    pa = CAM.project(pose_a.act(X))
    pb = CAM.project(pose_b.act(X))
    pose_mirrored = SE3(np.eye(3), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(BehindCamera):
        triangulate(pose_a, pose_mirrored, pa, pb, CAM)


def test_triangulate_batch_matches_scalar():
    rng = np.random.default_rng(7)
    pose_b, px_a, px_b, pts = synthetic_pair(rng, n=30, rot_deg=5.0)
    out, keep = triangulate_batch(SE3.identity(), pose_b, px_a, px_b, CAM)
    assert keep.all()
    assert np.allclose(out, pts, atol=1e-8)
