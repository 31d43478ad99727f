"""Spatio-temporal consistency for detections in translational aerial video.

Frames are registered by phase correlation, detections are linked into
tracks by displacement-aligned IoU, missed detections are filled by
projection and short-lived tracks are voted out by their detection ratio.
"""

from .geometry import BBox, iou, translate
from .metrics import EvalReport, GroundTruthObject, ap50, match_tracks, prf, sweep_tv, track_iou
from .registration import (
    Displacement,
    DisplacementTable,
    GrayFrame,
    IndeterminateDisplacement,
    cross_power_spectrum,
    decode_peak,
    phase_correlate,
    register_sequence,
)
from .tracker import (
    Detection,
    Track,
    TrackElement,
    TrackerParams,
    associate,
    build_tracks,
    filter_tracks,
    project,
    tracks_to_detections,
)

__version__ = "0.1.0"

__all__ = [
    "BBox", "iou", "translate",
    "Displacement", "DisplacementTable", "GrayFrame", "IndeterminateDisplacement",
    "cross_power_spectrum", "decode_peak", "phase_correlate", "register_sequence",
    "Detection", "Track", "TrackElement", "TrackerParams",
    "associate", "build_tracks", "filter_tracks", "project", "tracks_to_detections",
    "EvalReport", "GroundTruthObject", "ap50", "match_tracks", "prf", "sweep_tv", "track_iou",
]
