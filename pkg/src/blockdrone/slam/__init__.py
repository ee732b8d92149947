"""Monocular SLAM pipeline: features, two-view geometry, tracking, mapping."""

from .features import FrameFeatures, detect_features, hamming_matrix
from .matching import match_features
from .pipeline import (
    FrameResult,
    Keyframe,
    MapPoint,
    OutOfOrderFrame,
    SlamConfig,
    SlamMap,
    SlamNode,
    export_map,
    process_frame,
)
from .tracking import TrackingLost, optimize_pose, reprojection_residuals, track_frame
from .twoview import (
    BehindCamera,
    Degenerate,
    HighResidual,
    InsufficientMatches,
    LowParallax,
    NoParallax,
    TriangulationError,
    TwoViewError,
    decompose_essential,
    eight_point,
    estimate_two_view,
    sampson_error,
    triangulate,
    triangulate_batch,
)

__all__ = [
    "FrameFeatures",
    "detect_features",
    "hamming_matrix",
    "match_features",
    "FrameResult",
    "Keyframe",
    "MapPoint",
    "OutOfOrderFrame",
    "SlamConfig",
    "SlamMap",
    "SlamNode",
    "export_map",
    "process_frame",
    "TrackingLost",
    "optimize_pose",
    "reprojection_residuals",
    "track_frame",
    "TwoViewError",
    "InsufficientMatches",
    "NoParallax",
    "Degenerate",
    "TriangulationError",
    "BehindCamera",
    "HighResidual",
    "LowParallax",
    "eight_point",
    "sampson_error",
    "decompose_essential",
    "estimate_two_view",
    "triangulate",
    "triangulate_batch",
]
