"""Temporal intervals, scored proposals/detections and ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


class InvalidSegment(ValueError):
    """A temporal interval violates 0 <= start < end (<= 1 when normalized)."""


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TemporalSegment:
    start: float
    end: float

    def __post_init__(self):
        s, e = self.start, self.end
        if not (math.isfinite(s) and math.isfinite(e)) or not 0.0 <= s < e <= 1.0:
            raise InvalidSegment(f"invalid normalized segment [{s}, {e}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


def tiou(a: TemporalSegment, b: TemporalSegment) -> float:
    """Temporal IoU. Touching endpoints give 0."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return min(1.0, inter / union)


def tiou_array(starts, ends, g_start: float, g_end: float) -> np.ndarray:
    """Vectorised :func:`tiou` of many intervals against one; same arithmetic."""
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    inter = np.minimum(ends, g_end) - np.maximum(starts, g_start)
    union = (ends - starts) + (g_end - g_start) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inter > 0.0, np.minimum(1.0, inter / union), 0.0)
    return out


def to_normalized(seconds_segment, duration_seconds: float) -> TemporalSegment:
    s, e = float(seconds_segment[0]), float(seconds_segment[1])
    if not duration_seconds > 0:
        raise InvalidSegment(f"duration must be positive, got {duration_seconds}")
    if s < 0 or s >= e:
        raise InvalidSegment(f"segment [{s}, {e}] is empty or reversed")
    if s >= duration_seconds:
        raise InvalidSegment(f"segment [{s}, {e}] starts beyond duration {duration_seconds}")
    return TemporalSegment(s / duration_seconds, min(e / duration_seconds, 1.0))


def to_seconds(seg: TemporalSegment, duration_seconds: float) -> tuple[float, float]:
    return seg.start * duration_seconds, seg.end * duration_seconds


@dataclass(frozen=True)
class ScoreComponents:
    p_start: float
    p_end: float
    map_cc: float
    map_cr: float

    def as_dict(self) -> dict:
        return {"p_start": self.p_start, "p_end": self.p_end,
                "map_cc": self.map_cc, "map_cr": self.map_cr}


def _check_unit(name, x):
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


@dataclass(frozen=True)
class Proposal:
    segment: TemporalSegment
    score: float
    raw_components: Optional[ScoreComponents] = None
    refined_score: Optional[float] = None

    def __post_init__(self):
        _check_unit("score", self.score)
        if self.refined_score is not None:
            _check_unit("refined_score", self.refined_score)


@dataclass(frozen=True)
class Detection:
    segment: TemporalSegment
    label: str
    score: float

    def __post_init__(self):
        _check_unit("score", self.score)
        if not self.label:
            raise ValueError("detection label must be non-empty")


def rank_key(item) -> tuple:
    """Descending score; ties go to the earlier start, then the shorter span."""
    seg = item.segment
    return (-item.score, seg.start, seg.end - seg.start)


def sort_ranked(items: Iterable) -> list:
    return sorted(items, key=rank_key)


@dataclass
class VideoAnnotations:
    duration_seconds: float
    annotations: list[tuple[str, TemporalSegment]] = field(default_factory=list)

    def __post_init__(self):
        if not self.duration_seconds > 0:
            raise InvalidSegment(f"duration must be positive, got {self.duration_seconds}")

    @property
    def segments(self) -> list[TemporalSegment]:
        return [seg for _, seg in self.annotations]


@dataclass
class GroundTruthDB:
    videos: dict[str, VideoAnnotations] = field(default_factory=dict)

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    def __getitem__(self, video_id: str) -> VideoAnnotations:
        return self.videos[video_id]

    def __contains__(self, video_id) -> bool:
        return video_id in self.videos

    @property
    def n_instances(self) -> int:
        return sum(len(v.annotations) for v in self.videos.values())

    def labels(self) -> list[str]:
        return sorted({lab for v in self.videos.values() for lab, _ in v.annotations})

    def durations(self) -> dict[str, float]:
        return {vid: v.duration_seconds for vid, v in self.videos.items()}
