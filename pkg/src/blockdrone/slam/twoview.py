"""Two-view relative geometry: essential matrix, pose recovery, triangulation.

Initialization runs the normalized 8-point algorithm inside RANSAC on
calibrated (normalized image) coordinates, scores with the Sampson error,
and decomposes the winning essential matrix into the four (R, t)
candidates.  Cheirality (positive depth in both views) picks the real one;
the translation is normalized to unit length because monocular geometry
has no scale.
"""

from __future__ import annotations

import numpy as np

from ..geometry import SE3, CameraIntrinsics, hat, orthonormalize

RANSAC_MAX_ITERS = 1000
RANSAC_CONFIDENCE = 0.99
SAMPSON_THRESHOLD_PX = 1.5
MIN_PARALLAX_DEG = 1.0
CHEIRALITY_DOMINANCE = 0.9
TRIANGULATION_MAX_REPROJ_PX = 2.0


class TwoViewError(RuntimeError):
    pass


class InsufficientMatches(TwoViewError):
    pass


class NoParallax(TwoViewError):
    pass


class Degenerate(TwoViewError):
    pass


class TriangulationError(RuntimeError):
    pass


class BehindCamera(TriangulationError):
    pass


class HighResidual(TriangulationError):
    pass


class LowParallax(TriangulationError):
    pass


def _homogeneous(pts: np.ndarray) -> np.ndarray:
    return np.hstack([pts, np.ones((len(pts), 1))])


def eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Essential matrix from >= 8 normalized correspondences (x2' E x1 = 0).

    Hartley-style rescaling keeps the linear system well conditioned even
    though the inputs are already calibrated.
    """

    def normalize(pts):
        mean = pts.mean(axis=0)
        centered = pts - mean
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-12)
        T = np.array(
            [[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1]]
        )
        return centered * scale, T

    p1, T1 = normalize(x1)
    p2, T2 = normalize(x2)
    a1 = _homogeneous(p1)
    a2 = _homogeneous(p2)
    A = np.einsum("ni,nj->nij", a2, a1).reshape(len(x1), 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    F = T2.T @ F @ T1
    # project onto the essential manifold: two equal singular values, one zero
    U, s, Vt = np.linalg.svd(F)
    sigma = (s[0] + s[1]) / 2.0
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def sampson_error(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """First-order geometric error of x2' E x1 = 0 in normalized units."""
    h1 = _homogeneous(x1)
    h2 = _homogeneous(x2)
    Ex1 = h1 @ E.T
    Etx2 = h2 @ E
    num = np.sum(h2 * Ex1, axis=1) ** 2
    den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    return num / np.maximum(den, 1e-300)


def decompose_essential(E: np.ndarray):
    """The four (R, unit t) candidates of an essential matrix."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    t = t / np.linalg.norm(t)
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def triangulate_linear(pose_a: SE3, pose_b: SE3, xn_a: np.ndarray, xn_b: np.ndarray) -> np.ndarray:
    """DLT triangulation of normalized correspondences; returns (N, 3) points."""
    xn_a = np.atleast_2d(xn_a)
    xn_b = np.atleast_2d(xn_b)
    Pa = np.hstack([pose_a.R, pose_a.t[:, None]])
    Pb = np.hstack([pose_b.R, pose_b.t[:, None]])
    out = np.empty((len(xn_a), 3))
    for i, (pa, pb) in enumerate(zip(xn_a, xn_b)):
        A = np.stack(
            [
                pa[0] * Pa[2] - Pa[0],
                pa[1] * Pa[2] - Pa[1],
                pb[0] * Pb[2] - Pb[0],
                pb[1] * Pb[2] - Pb[1],
            ]
        )
        _, _, Vt = np.linalg.svd(A)
        X = Vt[-1]
        out[i] = X[:3] / X[3] if abs(X[3]) > 1e-300 else np.full(3, np.inf)
    return out


def parallax_angles(pose_a: SE3, pose_b: SE3, points: np.ndarray) -> np.ndarray:
    """Angle (rad) subtended at each point by the two camera centers.

    A point coinciding with a camera center has no usable parallax and
    reports zero.
    """
    ca, cb = pose_a.center(), pose_b.center()
    ra = points - ca
    rb = points - cb
    na = np.linalg.norm(ra, axis=1)
    nb = np.linalg.norm(rb, axis=1)
    denom = na * nb
    cosang = np.where(denom > 1e-12, np.sum(ra * rb, axis=1) / np.maximum(denom, 1e-300), 1.0)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def estimate_two_view(
    px_a: np.ndarray,
    px_b: np.ndarray,
    cam: CameraIntrinsics,
    rng: np.random.Generator | None = None,
    max_iters: int = RANSAC_MAX_ITERS,
    threshold_px: float = SAMPSON_THRESHOLD_PX,
):
    """Relative pose of view b w.r.t. view a from matched pixels.

    Returns (SE3 with unit-norm translation, inlier mask).  Raises
    InsufficientMatches (< 8), NoParallax (median triangulation angle
    below 1 degree) or Degenerate (no cheirality winner).
    """
    px_a = np.asarray(px_a, dtype=float).reshape(-1, 2)
    px_b = np.asarray(px_b, dtype=float).reshape(-1, 2)
    n = len(px_a)
    if n < 8 or len(px_b) != n:
        raise InsufficientMatches(f"need >= 8 matches, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)

    x1 = cam.normalize(px_a)
    x2 = cam.normalize(px_b)
    # pixel threshold mapped into normalized units by the mean focal length
    thr = (threshold_px / ((cam.fx + cam.fy) / 2.0)) ** 2

    best_mask = None
    best_count = 0
    iters_needed = max_iters
    it = 0
    while it < min(max_iters, iters_needed):
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            E = eight_point(x1[sample], x2[sample])
        except np.linalg.LinAlgError:
            continue
        mask = sampson_error(E, x1, x2) < thr
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w > 0:
                denom = np.log(max(1.0 - w**8, 1e-12))
                iters_needed = int(np.ceil(np.log(1.0 - RANSAC_CONFIDENCE) / denom))
    if best_mask is None or best_count < 8:
        raise Degenerate("RANSAC found no consistent model")

    # refit on the consensus set and refresh the mask once
    E = eight_point(x1[best_mask], x2[best_mask])
    best_mask = sampson_error(E, x1, x2) < thr
    if int(best_mask.sum()) < 8:
        raise Degenerate("consensus collapsed on refit")

    xi1 = x1[best_mask]
    xi2 = x2[best_mask]
    identity = SE3.identity()
    votes = []
    candidates = decompose_essential(E)
    for R, t in candidates:
        pose_b = SE3(R, t)
        pts = triangulate_linear(identity, pose_b, xi1, xi2)
        za = pts[:, 2]
        zb = pose_b.act(pts)[:, 2]
        votes.append(int(np.sum((za > 0) & (zb > 0))))
    total = sum(votes)
    if total == 0:
        raise NoParallax("no candidate places points in front of both views")
    best = int(np.argmax(votes))
    R, t = candidates[best]
    pose_b = SE3(orthonormalize(R), t / np.linalg.norm(t))

    pts = triangulate_linear(identity, pose_b, xi1, xi2)
    good = (pts[:, 2] > 0) & (pose_b.act(pts)[:, 2] > 0)
    if int(good.sum()) == 0:
        raise NoParallax("triangulation produced no points in front of both views")
    angles = parallax_angles(identity, pose_b, pts[good])
    if np.degrees(np.median(angles)) < MIN_PARALLAX_DEG:
        raise NoParallax(
            f"median triangulation angle {np.degrees(np.median(angles)):.3f} deg"
        )
    if votes[best] < CHEIRALITY_DOMINANCE * total:
        raise Degenerate(f"cheirality votes {votes} lack a dominant candidate")
    return pose_b, best_mask


def triangulate(
    pose_a: SE3,
    pose_b: SE3,
    pixel_a: np.ndarray,
    pixel_b: np.ndarray,
    cam: CameraIntrinsics,
    max_reproj_px: float = TRIANGULATION_MAX_REPROJ_PX,
    min_parallax_deg: float = MIN_PARALLAX_DEG,
) -> np.ndarray:
    """Triangulate one correspondence with quality gates.

    Raises BehindCamera, HighResidual or LowParallax when the point fails
    the depth, reprojection or parallax checks.
    """
    xn_a = cam.normalize(np.asarray(pixel_a, dtype=float))
    xn_b = cam.normalize(np.asarray(pixel_b, dtype=float))
    X = triangulate_linear(pose_a, pose_b, xn_a, xn_b)[0]
    if not np.all(np.isfinite(X)):
        raise LowParallax("triangulation at infinity")
    # parallax first: with a degenerate baseline the solution itself is
    # meaningless, so depth/residual verdicts would be noise
    angle = parallax_angles(pose_a, pose_b, X[None, :])[0]
    if np.degrees(angle) < min_parallax_deg:
        raise LowParallax(f"parallax {np.degrees(angle):.3f} deg")
    pa = pose_a.act(X)
    pb = pose_b.act(X)
    if pa[2] <= 0 or pb[2] <= 0:
        raise BehindCamera(f"depths ({pa[2]:.3f}, {pb[2]:.3f})")
    ra = np.linalg.norm(cam.project(pa) - pixel_a)
    rb = np.linalg.norm(cam.project(pb) - pixel_b)
    if ra > max_reproj_px or rb > max_reproj_px:
        raise HighResidual(f"reprojection ({ra:.2f}, {rb:.2f}) px")
    return X


def triangulate_batch(pose_a, pose_b, px_a, px_b, cam,
                      max_reproj_px: float = TRIANGULATION_MAX_REPROJ_PX,
                      min_parallax_deg: float = MIN_PARALLAX_DEG):
    """Vectorized gated triangulation; returns (points (M,3), keep mask (N,))."""
    px_a = np.asarray(px_a, dtype=float).reshape(-1, 2)
    px_b = np.asarray(px_b, dtype=float).reshape(-1, 2)
    X = triangulate_linear(pose_a, pose_b, cam.normalize(px_a), cam.normalize(px_b))
    finite = np.all(np.isfinite(X), axis=1)
    X_safe = np.where(finite[:, None], X, 0.0)
    pa = pose_a.act(X_safe)
    pb = pose_b.act(X_safe)
    depth_ok = (pa[:, 2] > 0) & (pb[:, 2] > 0) & finite
    with np.errstate(all="ignore"):
        ra = np.linalg.norm(cam.project(pa) - px_a, axis=1)
        rb = np.linalg.norm(cam.project(pb) - px_b, axis=1)
        resid_ok = (ra <= max_reproj_px) & (rb <= max_reproj_px)
    angles = parallax_angles(pose_a, pose_b, X_safe)
    par_ok = np.degrees(angles) >= min_parallax_deg
    keep = depth_ok & resid_ok & par_ok
    return X[keep], keep
