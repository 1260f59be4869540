"""Tracking two-sided planar objects with a k-NN segmenter and homography search."""
from .geometry import Homography, compose, homography_from_correspondences, invert
from .segmenter import Label
from .tracker import FrameResult, Templates, Tracker, TrackerConfig, TrackerState, run_sequence

__version__ = "0.1.0"

__all__ = [
    "FrameResult",
    "Homography",
    "Label",
    "Templates",
    "Tracker",
    "TrackerConfig",
    "TrackerState",
    "compose",
    "homography_from_correspondences",
    "invert",
    "run_sequence",
]
