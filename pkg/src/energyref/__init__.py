"""Referee harness for energy-aware image recognition benchmarks."""

from .energy import EnergyReport, MeterProfile, PowerSample, integrate_energy
from .scoring import (BoundingBox, Detection, GroundTruthObject, ScoreReport, Track1Record,
                      Track1Report, average_precision, final_score, iou, match_detections,
                      mean_average_precision, score_statistics, track1_metrics)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "Detection", "EnergyReport", "GroundTruthObject", "MeterProfile",
    "PowerSample", "ScoreReport", "Track1Record", "Track1Report", "average_precision",
    "final_score", "integrate_energy", "iou", "match_detections", "mean_average_precision",
    "score_statistics", "track1_metrics",
]
