"""Persistence and evaluation: PLY clouds, TUM trajectories, Sim(3) ATE.

Monocular maps come with an arbitrary gauge, so trajectory error is only
meaningful after a similarity alignment: ate_rmse associates poses by
nearest timestamp, solves the closed-form Umeyama problem and reports the
RMS residual.  PLY files hold float32 vertices (optionally with an
intensity channel) in ascii or binary little-endian; TUM files are the
usual `t tx ty tz qx qy qz qw` lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ASSOCIATION_MAX_GAP_S = 0.05


class IoFailure(OSError):
    pass


class MalformedHeader(ValueError):
    pass


class TruncatedBody(ValueError):
    pass


class MalformedLine(ValueError):
    pass


class NonMonotoneTimestamps(ValueError):
    pass


class DegenerateConfiguration(ValueError):
    pass


class NoAssociations(ValueError):
    pass


# ------------------------------------------------------------------- types


@dataclass
class PointCloud:
    """3D points, float32; optional per-point intensity in [0, 1]."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        if self.intensity is not None:
            self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32).reshape(-1)
            if len(self.intensity) != len(self.points):
                raise ValueError("intensity length must match point count")
        if len(self.points) and not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if (self.intensity is None) != (other.intensity is None):
            return False
        return self.intensity is None or np.array_equal(self.intensity, other.intensity)


@dataclass
class TrajectoryPose:
    t: float
    position: np.ndarray
    quaternion: np.ndarray  # (qx, qy, qz, qw)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.quaternion = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = float(np.linalg.norm(self.quaternion))
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-3:
            raise ValueError(f"quaternion norm {norm} too far from 1")
        self.quaternion = self.quaternion / norm


@dataclass
class Trajectory:
    poses: list = field(default_factory=list)

    def __post_init__(self):
        ts = [p.t for p in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise NonMonotoneTimestamps("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def timestamps(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses]).reshape(-1, 3)


# --------------------------------------------------------------------- PLY


_PLY_FORMATS = {"ascii": "format ascii 1.0", "binary_le": "format binary_little_endian 1.0"}


def write_ply(cloud: PointCloud, path, mode: str = "binary_le") -> None:
    if mode not in _PLY_FORMATS:
        raise ValueError(f"mode must be one of {sorted(_PLY_FORMATS)}")
    props = ["x", "y", "z"] + (["intensity"] if cloud.intensity is not None else [])
    header = ["ply", _PLY_FORMATS[mode], f"element vertex {len(cloud)}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    data = cloud.points
    if cloud.intensity is not None:
        data = np.hstack([cloud.points, cloud.intensity[:, None]])
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            if mode == "binary_le":
                fh.write(data.astype("<f4").tobytes())
            else:
                for row in data:
                    fh.write((" ".join(f"{v:.9g}" for v in row) + "\n").encode("ascii"))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_ply(path) -> PointCloud:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise MalformedHeader("missing ply magic or end_header")
    header_lines = blob[:end].decode("ascii", "replace").splitlines()
    body = blob[end + len(b"end_header\n") :]

    fmt = None
    n_vertices = None
    props: list[str] = []
    for line in header_lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if line == _PLY_FORMATS["ascii"]:
                fmt = "ascii"
            elif line == _PLY_FORMATS["binary_le"]:
                fmt = "binary_le"
            else:
                raise MalformedHeader(f"unsupported format line {line!r}")
        elif parts[0] == "element":
            if parts[1] != "vertex" or len(parts) != 3:
                raise MalformedHeader(f"unsupported element {line!r}")
            n_vertices = int(parts[2])
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] != "float":
                raise MalformedHeader(f"unsupported property {line!r}")
            props.append(parts[2])
        else:
            raise MalformedHeader(f"unexpected header line {line!r}")
    if fmt is None or n_vertices is None:
        raise MalformedHeader("header missing format or element vertex")
    if props not in (["x", "y", "z"], ["x", "y", "z", "intensity"]):
        raise MalformedHeader(f"unsupported property set {props}")
    k = len(props)

    if fmt == "binary_le":
        need = n_vertices * k * 4
        if len(body) < need:
            raise TruncatedBody(f"need {need} bytes, have {len(body)}")
        data = np.frombuffer(body[:need], dtype="<f4").reshape(n_vertices, k)
    else:
        rows = [ln for ln in body.decode("ascii", "replace").splitlines() if ln.strip()]
        if len(rows) < n_vertices:
            raise TruncatedBody(f"need {n_vertices} rows, have {len(rows)}")
        try:
            data = np.array(
                [[float(v) for v in rows[i].split()] for i in range(n_vertices)],
                dtype=np.float32,
            ).reshape(n_vertices, k)
        except ValueError as exc:
            raise TruncatedBody(f"bad ascii vertex row: {exc}") from exc
    return PointCloud(data[:, :3], data[:, 3] if k == 4 else None)


# --------------------------------------------------------------------- TUM


def write_tum(traj: Trajectory, path) -> None:
    try:
        with open(path, "w", encoding="ascii") as fh:
            for p in traj.poses:
                vals = " ".join(
                    f"{v:.9g}" for v in (*p.position, *p.quaternion)
                )
                fh.write(f"{p.t:.8f} {vals}\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_tum(path) -> Trajectory:
    try:
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    poses = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 8:
            raise MalformedLine(f"line {lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError as exc:
            raise MalformedLine(f"line {lineno}: {exc}") from exc
        try:
            poses.append(TrajectoryPose(vals[0], vals[1:4], vals[4:8]))
        except ValueError as exc:
            raise MalformedLine(f"line {lineno}: {exc}") from exc
    return Trajectory(poses)


# ----------------------------------------------------------------- Umeyama


@dataclass
class Sim3:
    """Similarity transform p -> scale * R @ p + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * (pts @ self.rotation.T) + self.translation


def umeyama_align(est: np.ndarray, gt: np.ndarray, with_scale: bool = True) -> Sim3:
    """Least-squares similarity (or rigid) transform taking `est` onto `gt`.

    Closed form via the SVD of the cross-covariance with reflection
    correction; minimizes sum ||s R est_i + t - gt_i||^2.
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(est) != len(gt):
        raise ValueError("point lists must have equal length")
    n = len(est)
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 points, got {n}")

    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    de = est - mu_e
    dg = gt - mu_g
    cov = dg.T @ de / n
    var_e = float(np.sum(de * de)) / n
    if var_e < 1e-300:
        raise DegenerateConfiguration("source points are coincident")

    U, D, Vt = np.linalg.svd(cov)
    if D[1] <= 1e-12 * max(D[0], 1e-300):
        raise DegenerateConfiguration("points are collinear")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S) / var_e) if with_scale else 1.0
    if scale <= 0:
        raise DegenerateConfiguration(f"non-positive scale {scale}")
    t = mu_g - scale * R @ mu_e
    return Sim3(scale, R, t)


def associate(
    ts_a: np.ndarray, ts_b: np.ndarray, max_gap: float = ASSOCIATION_MAX_GAP_S
):
    """Greedy one-to-one nearest-timestamp pairing within `max_gap` seconds."""
    ts_a = np.asarray(ts_a, dtype=float)
    ts_b = np.asarray(ts_b, dtype=float)
    if len(ts_a) == 0 or len(ts_b) == 0:
        return []
    gaps = np.abs(ts_a[:, None] - ts_b[None, :])
    ia, ib = np.nonzero(gaps <= max_gap)
    order = np.argsort(gaps[ia, ib], kind="stable")
    used_a: set = set()
    used_b: set = set()
    pairs = []
    for k in order:
        i, j = int(ia[k]), int(ib[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def ate_report(
    est: Trajectory, gt: Trajectory, max_gap: float = ASSOCIATION_MAX_GAP_S
) -> dict:
    """Sim(3)-aligned absolute trajectory error; returns rmse, count, scale."""
    pairs = associate(est.timestamps(), gt.timestamps(), max_gap)
    if len(pairs) < 3:
        raise NoAssociations(f"only {len(pairs)} timestamp associations")
    e = est.positions()[[i for i, _ in pairs]]
    g = gt.positions()[[j for _, j in pairs]]
    sim = umeyama_align(e, g, with_scale=True)
    residuals = sim.apply(e) - g
    rmse = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    return {"ate_rmse_m": rmse, "poses": len(pairs), "scale": sim.scale}


def ate_rmse(est: Trajectory, gt: Trajectory, max_gap: float = ASSOCIATION_MAX_GAP_S) -> float:
    return ate_report(est, gt, max_gap)["ate_rmse_m"]
