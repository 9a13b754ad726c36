"""Soft-NMS, proposal/classification fusion, ensembling and the submission file."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from prn.core import Detection, GroundTruthDB, ShapeMismatch, sort_ranked, tiou, to_normalized
from prn.ingest import ClassificationScores, SchemaError
from prn.propgen import ConfidenceMaps, valid_mask

SUBMISSION_VERSION = "1.3"

SUBMISSION_SCHEMA = {
    "type": "object",
    "required": ["version", "results", "external_data"],
    "properties": {
        "version": {"type": "string"},
        "external_data": {"type": "object"},
        "results": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["label", "score", "segment"],
                    "properties": {
                        "label": {"type": "string", "minLength": 1},
                        "score": {"type": "number", "minimum": 0, "maximum": 1},
                        "segment": {"type": "array", "items": {"type": "number", "minimum": 0},
                                    "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
    },
}


class EmptyClassification(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NmsConfig:
    sigma: float = 0.4
    score_floor: float = 0.0005
    top_k: int = 100

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.score_floor < 1.0):
            raise ValueError(f"score_floor must be in [0, 1), got {self.score_floor}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be positive, got {self.top_k}")


def soft_nms(items: Sequence, cfg: NmsConfig = NmsConfig()) -> list:
    """Gaussian soft-NMS over anything with ``.segment`` and ``.score``.

    Each pick decays the rest by ``exp(-tiou^2 / sigma)``; items falling below
    ``score_floor`` are dropped. Selected items keep the score they had when
    picked.
    """
    remaining = sort_ranked(items)
    scores = [it.score for it in remaining]
    kept = []
    while remaining and len(kept) < cfg.top_k:
        best = min(range(len(remaining)), key=lambda j: (-scores[j],) + _geom(remaining[j]))
        pick = remaining.pop(best)
        pick_score = scores.pop(best)
        kept.append(pick if pick_score == pick.score else replace(pick, score=pick_score))
        survivors, surv_scores = [], []
        for it, sc in zip(remaining, scores):
            iou = tiou(pick.segment, it.segment)
            if iou > 0.0:
                sc = sc * math.exp(-iou * iou / cfg.sigma)
            if sc >= cfg.score_floor:
                survivors.append(it)
                surv_scores.append(sc)
        remaining, scores = survivors, surv_scores
    return sort_ranked(kept)


def _geom(it) -> tuple:
    return it.segment.start, it.segment.end - it.segment.start


def fuse_classification(proposals: Sequence, cls: ClassificationScores,
                        top_k_classes: int = 2) -> list[Detection]:
    if top_k_classes < 1:
        raise ValueError("top_k_classes must be >= 1")
    if not cls.entries:
        raise EmptyClassification(f"{cls.video_id}: no classification scores")
    out = [Detection(p.segment, label, min(1.0, p.score * cs))
           for p in proposals for label, cs in cls.top(top_k_classes)]
    return sorted(out, key=lambda d: (-d.score, d.segment.start, d.segment.length, d.label))


def _normalize_weights(weights: Sequence[float]) -> list[float]:
    if any(not (w > 0) for w in weights):
        raise ValueError("ensemble weights must be positive")
    total = math.fsum(weights)
    return [w / total for w in weights]


def per_label_nms(dets: Sequence[Detection], cfg: NmsConfig) -> list[Detection]:
    groups: dict[str, list[Detection]] = {}
    for d in dets:
        groups.setdefault(d.label, []).append(d)
    merged = [d for label in sorted(groups) for d in soft_nms(groups[label], cfg)]
    return sorted(merged, key=lambda d: (-d.score, d.segment.start, d.segment.length, d.label))


def ensemble(runs: Sequence[dict[str, list[Detection]]], weights: Sequence[float],
             cfg: NmsConfig = NmsConfig()) -> dict[str, list[Detection]]:
    if len(runs) != len(weights) or not runs:
        raise LengthMismatch(f"{len(runs)} runs but {len(weights)} weights")
    norm = _normalize_weights(weights)
    videos = sorted({vid for run in runs for vid in run})
    out = {}
    for vid in videos:
        pooled = [replace(d, score=d.score * wt) for run, wt in zip(runs, norm) for d in run.get(vid, [])]
        out[vid] = per_label_nms(pooled, cfg)
    return out


def ensemble_maps(maps_list: Sequence[ConfidenceMaps], weights: Sequence[float]) -> ConfidenceMaps:
    if len(maps_list) != len(weights) or not maps_list:
        raise LengthMismatch(f"{len(maps_list)} maps but {len(weights)} weights")
    t, d_max = maps_list[0].t, maps_list[0].d_max
    for m in maps_list:
        if (m.t, m.d_max) != (t, d_max):
            raise ShapeMismatch(f"cannot average maps of shape ({m.d_max}, {m.t}) with ({d_max}, {t})")
    norm = _normalize_weights(weights)

    def avg(name):
        acc = sum(wt * getattr(m, name) for m, wt in zip(maps_list, norm))
        return np.clip(acc, 0.0, 1.0)

    m_cc, m_cr = avg("m_cc"), avg("m_cr")
    invalid = ~valid_mask(d_max, t)
    m_cc[invalid] = 0.0
    m_cr[invalid] = 0.0
    return ConfidenceMaps(avg("p_start"), avg("p_end"), m_cc, m_cr)


# -- submission file --------------------------------------------------------

def detections_to_submission(dets: dict[str, list[Detection]], durations: dict[str, float]) -> dict:
    results = {}
    for vid in sorted(dets):
        if vid not in durations:
            raise KeyError(f"no duration known for video {vid!r}")
        dur = durations[vid]
        results[vid] = [{"label": d.label, "score": d.score,
                         "segment": [d.segment.start * dur, d.segment.end * dur]} for d in dets[vid]]
    return {"version": SUBMISSION_VERSION, "results": results, "external_data": {}}


def validate_submission(doc: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(doc, SUBMISSION_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"submission does not match schema: {exc.message}") from None


def submission_to_detections(doc: dict, durations: dict[str, float]) -> dict[str, list[Detection]]:
    validate_submission(doc)
    out = {}
    for vid, items in doc["results"].items():
        if vid not in durations:
            raise KeyError(f"no duration known for video {vid!r}")
        out[vid] = [Detection(to_normalized(it["segment"], durations[vid]), it["label"], float(it["score"]))
                    for it in items]
    return out


def save_submission(dets: dict[str, list[Detection]], durations: dict[str, float], path) -> dict:
    doc = detections_to_submission(dets, durations)
    validate_submission(doc)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def load_submission(path, gt: GroundTruthDB) -> dict[str, list[Detection]]:
    return submission_to_detections(json.loads(Path(path).read_text()), gt.durations())
