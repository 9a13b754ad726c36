"""Temporal action detection with proposal relation rescoring.

Proposal generation from boundary-matching confidence maps, self-attention
rescoring of the proposal set, soft-NMS / classification fusion, and the
AR@AN / AUC / average-mAP evaluation protocol.
"""

from prn.core import (
    Detection,
    GroundTruthDB,
    InvalidSegment,
    Proposal,
    ShapeMismatch,
    TemporalSegment,
    tiou,
    to_normalized,
)

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "GroundTruthDB",
    "InvalidSegment",
    "Proposal",
    "ShapeMismatch",
    "TemporalSegment",
    "tiou",
    "to_normalized",
]
