"""Feature front end: FAST-9 corners with steered binary descriptors.

Single-scale by design: the synthetic dot scenes carry no scale ambiguity,
and staying off the pyramid keeps every stage directly verifiable.

The detector walks a threshold ladder from 20 down to 5 until it has
enough corners.  One vectorized 4-pixel speed test at the floor threshold
yields a candidate superset reused by every ladder step, so higher
thresholds cost almost nothing; the exact 16-pixel arc test and scoring
run only on candidates.  Non-maxima are suppressed on an 8 px radius,
positions refined to subpixel by patch centroid.

Descriptors are 256 point-pair intensity comparisons.  The sampling
pattern is wide (sigma 12 px, clipped to +/-31) so that a keypoint's
descriptor captures the constellation of its neighbors, not just its own
blob: isolated dots all look alike up close, their surroundings do not.
Orientation is the intensity-centroid angle of the 15 px patch, with a
stability gate: when the centroid offset is below a fraction of a pixel
the angle carries no signal and the pattern is left unrotated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dx, dy), y down.
RING = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)

ARC_LENGTH = 9
THRESHOLD_LADDER = (20, 15, 10, 5)
THRESHOLD_FLOOR = THRESHOLD_LADDER[-1]
NMS_RADIUS = 8
ORIENT_RADIUS = 7             # 15 px intensity-centroid patch
ORIENT_MIN_OFFSET = 0.75      # px; below this the centroid angle is noise
DESCRIPTOR_BITS = 256
PATTERN_SEED = 20839
PATTERN_SIGMA = 16.0          # px; wide enough to see neighboring blobs
PATTERN_CLIP = 41
N_ANGLE_BINS = 32
BORDER = 60                   # keeps every rotated descriptor sample in-image


def _rotated_patterns() -> np.ndarray:
    """Fixed random point pairs, pre-rotated per quantized orientation bin."""
    rng = np.random.default_rng(PATTERN_SEED)
    base = np.clip(
        rng.normal(0.0, PATTERN_SIGMA, size=(DESCRIPTOR_BITS, 2, 2)),
        -PATTERN_CLIP,
        PATTERN_CLIP,
    )
    out = np.empty((N_ANGLE_BINS, DESCRIPTOR_BITS, 2, 2), dtype=np.int64)
    for b in range(N_ANGLE_BINS):
        theta = 2.0 * np.pi * b / N_ANGLE_BINS
        c, s = np.cos(theta), np.sin(theta)
        x, y = base[..., 0], base[..., 1]  # image coords: x right, y down
        out[b, ..., 0] = np.rint(c * x - s * y)
        out[b, ..., 1] = np.rint(s * x + c * y)
    return out


_PATTERNS = _rotated_patterns()


def _orient_offsets():
    r = ORIENT_RADIUS
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
    disk = xs**2 + ys**2 <= r**2
    return xs[disk], ys[disk]


_ORIENT_X, _ORIENT_Y = _orient_offsets()


@dataclass
class FrameFeatures:
    """Per-frame keypoints and descriptors (parallel arrays)."""

    t: float
    xy: np.ndarray                # (N, 2) float64 subpixel positions
    scores: np.ndarray            # (N,)
    angles: np.ndarray            # (N,) rad
    descriptors: np.ndarray       # (N, 4) uint64, 256 packed bits

    def __post_init__(self):
        n = len(self.xy)
        assert len(self.scores) == len(self.angles) == len(self.descriptors) == n

    def __len__(self) -> int:
        return len(self.xy)

    @staticmethod
    def empty(t: float = 0.0) -> "FrameFeatures":
        return FrameFeatures(
            t,
            np.zeros((0, 2)),
            np.zeros(0),
            np.zeros(0),
            np.zeros((0, 4), dtype=np.uint64),
        )


_BLOCK = 16  # contrast-prescreen tile size, must exceed the ring radius


def _hot_bbox(img: np.ndarray):
    """Bounding box (y0, y1, x0, x1) of tiles with contrast above the floor.

    A FAST corner needs a ring pixel within 3 px differing by more than the
    threshold, so every corner lies inside a high-contrast tile grown by
    one tile.  Returns None when the whole image is flat.
    """
    h, w = img.shape
    hb, wb = h // _BLOCK, w // _BLOCK
    rows = img[: hb * _BLOCK].reshape(hb, _BLOCK, w)
    row_max = rows.max(axis=1)[:, : wb * _BLOCK].reshape(hb, wb, _BLOCK)
    row_min = rows.min(axis=1)[:, : wb * _BLOCK].reshape(hb, wb, _BLOCK)
    contrast = row_max.max(axis=2).astype(np.int16) - row_min.min(axis=2)
    ty, tx = np.nonzero(contrast > THRESHOLD_FLOOR)
    if len(ty) == 0:
        # ragged right/bottom edges fall outside the BORDER margin anyway
        return None
    y0 = max((ty.min() - 1) * _BLOCK, BORDER)
    y1 = min((ty.max() + 2) * _BLOCK, h - BORDER)
    x0 = max((tx.min() - 1) * _BLOCK, BORDER)
    x1 = min((tx.max() + 2) * _BLOCK, w - BORDER)
    if y0 >= y1 or x0 >= x1:
        return None
    return y0, y1, x0, x1


def _floor_candidates(img: np.ndarray):
    """Candidate superset at the floor threshold.

    Any 9-contiguous arc on the 16-ring touches ring position 0 or 8, so a
    pixel can only be a corner if it differs from one of those two by more
    than the threshold.  The exact segment test prunes the rest.
    """
    h, w = img.shape
    if h <= 2 * BORDER or w <= 2 * BORDER:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    bbox = _hot_bbox(img)
    if bbox is None:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    y0, y1, x0, x1 = bbox
    center = img[y0:y1, x0:x1]
    mask = None
    for k in (0, 8):
        dx, dy = RING[k]
        ring = img[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        diff = np.maximum(ring, center) - np.minimum(ring, center)
        hit = diff > THRESHOLD_FLOOR
        mask = hit if mask is None else (mask | hit)
    ys, xs = np.nonzero(mask)
    return ys + y0, xs + x0


_RING_POW = (1 << np.arange(16, dtype=np.uint32))
_ARC_MASKS = np.array(
    [(((1 << ARC_LENGTH) - 1) << s) & 0xFFFF | ((((1 << ARC_LENGTH) - 1) << s) >> 16)
     for s in range(16)],
    dtype=np.uint32,
)


def _arc_mask(bits: np.ndarray) -> np.ndarray:
    """Rows having >= ARC_LENGTH contiguous True around the 16-ring.

    The 16 booleans pack into a uint16; a circular 9-run exists iff the
    packed word covers one of the 16 precomputed wrap-around masks.
    """
    packed = (bits.astype(np.uint32) * _RING_POW[None, :]).sum(axis=1).astype(np.uint32)
    ok = np.zeros(len(bits), dtype=bool)
    for mask in _ARC_MASKS:
        ok |= (packed & mask) == mask
    return ok


_DISK_CACHE: dict = {}


def _disk(radius: int) -> np.ndarray:
    if radius not in _DISK_CACHE:
        gy, gx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
        _DISK_CACHE[radius] = (gx * gx + gy * gy < radius * radius).astype(np.uint8)
    return _DISK_CACHE[radius]


def _suppress(ys, xs, scores, radius: int, shape, limit: int):
    """Greedy non-max suppression, strongest first.

    Accepted corners paint a suppression disk onto an occupancy canvas;
    anything landing on painted ground is within `radius` of a stronger
    accepted corner.  Detection keeps a BORDER margin, so disks never clip.
    """
    order = np.argsort(-scores, kind="stable")
    canvas = np.zeros(shape, dtype=np.uint8)
    disk = _disk(radius)
    keep = []
    for i in order:
        y, x = ys[i], xs[i]
        if canvas[y, x]:
            continue
        keep.append(i)
        if len(keep) >= limit:
            break
        canvas[y - radius : y + radius + 1, x - radius : x + radius + 1] |= disk
    return np.array(keep, dtype=np.int64)


def _subpixel(img: np.ndarray, ys, xs, r: int = 2):
    """Intensity-centroid refinement inside a (2r+1)^2 window, batched."""
    gy, gx = np.mgrid[-r : r + 1, -r : r + 1]
    patches = img[
        ys[:, None, None] + gy[None, :, :], xs[:, None, None] + gx[None, :, :]
    ].astype(np.float64)
    patches -= patches.min(axis=(1, 2), keepdims=True)
    m = patches.sum(axis=(1, 2))
    m[m <= 0] = 1.0
    dx = (patches * gx).sum(axis=(1, 2)) / m
    dy = (patches * gy).sum(axis=(1, 2)) / m
    return np.stack([xs + dx, ys + dy], axis=1)


def _orientations(img: np.ndarray, ys, xs):
    """Intensity-centroid angle; zero when the centroid offset is noise-level."""
    patches = img[ys[:, None] + _ORIENT_Y[None, :], xs[:, None] + _ORIENT_X[None, :]].astype(
        np.float64
    )
    m00 = patches.sum(axis=1)
    m10 = (patches * _ORIENT_X).sum(axis=1)
    m01 = (patches * _ORIENT_Y).sum(axis=1)
    m00[m00 <= 0] = 1.0
    angles = np.arctan2(m01, m10)
    angles[np.hypot(m10, m01) / m00 < ORIENT_MIN_OFFSET] = 0.0
    return angles


def _describe(img: np.ndarray, ys, xs, angles):
    """Steered 256-bit binary descriptors, packed into (N, 4) uint64.

    Keypoints sharing an orientation bin are described in one batched
    gather (bin 0 dominates on translation-only motion).
    """
    n = len(ys)
    out = np.empty((n, 4), dtype=np.uint64)
    bins = np.rint(angles / (2.0 * np.pi) * N_ANGLE_BINS).astype(int) % N_ANGLE_BINS
    for b in np.unique(bins):
        idx = np.nonzero(bins == b)[0]
        pat = _PATTERNS[b]
        ay = ys[idx, None] + pat[None, :, 0, 1]
        ax = xs[idx, None] + pat[None, :, 0, 0]
        by = ys[idx, None] + pat[None, :, 1, 1]
        bx = xs[idx, None] + pat[None, :, 1, 0]
        bits = img[ay, ax] < img[by, bx]
        out[idx] = np.packbits(bits, axis=1).view(">u8").astype(np.uint64)
    return out


def detect_features(img, target_count: int = 400, t: float = 0.0) -> FrameFeatures:
    """Detect corners, adapting the FAST threshold down the ladder until
    `target_count` is reached (or the floor), then orient and describe.
    """
    pixels = img.pixels if hasattr(img, "pixels") else np.asarray(img)
    # a frame whose global contrast is inside the floor threshold has no corners
    if int(pixels.max()) - int(pixels.min()) <= THRESHOLD_FLOOR:
        return FrameFeatures.empty(t)
    cand_y, cand_x = _floor_candidates(pixels)
    if len(cand_y) == 0:
        return FrameFeatures.empty(t)
    img16 = pixels.astype(np.int16)

    ring_vals = np.stack(
        [img16[cand_y + dy, cand_x + dx] for dx, dy in RING], axis=1
    )  # (N, 16)
    center = img16[cand_y, cand_x][:, None]
    diff = ring_vals - center

    ys = xs = scores = None
    for threshold in THRESHOLD_LADDER:
        brighter = diff > threshold
        darker = diff < -threshold
        corner = _arc_mask(brighter) | _arc_mask(darker)
        score_b = np.where(brighter, diff - threshold, 0).sum(axis=1)
        score_d = np.where(darker, -diff - threshold, 0).sum(axis=1)
        ys, xs = cand_y[corner], cand_x[corner]
        scores = np.maximum(score_b, score_d)[corner].astype(np.float64)
        if len(ys) >= target_count:
            break
    if len(ys) == 0:
        return FrameFeatures.empty(t)

    keep = _suppress(ys, xs, scores, NMS_RADIUS, pixels.shape, target_count)
    ys, xs, scores = ys[keep], xs[keep], scores[keep]
    xy = _subpixel(img16, ys, xs)
    angles = _orientations(img16, ys, xs)
    descriptors = _describe(img16, ys, xs, angles)
    return FrameFeatures(t, xy, scores, angles, descriptors)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed descriptor arrays."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.int64)
    x = a[:, None, :] ^ b[None, :, :]
    return np.bitwise_count(x).sum(axis=2).astype(np.int64)
