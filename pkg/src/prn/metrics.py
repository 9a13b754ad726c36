"""Proposal recall (AR@AN, AUC) and detection mAP.

Only the ranking of scores matters anywhere in this module: every list is
ordered by ``rank_key`` (score, then start, then length) before matching, so
any strictly increasing transform of the scores leaves every metric
bit-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from prn.core import Detection, GroundTruthDB, TemporalSegment, rank_key, sort_ranked, tiou, tiou_array


class NoGroundTruth(ValueError):
    pass


def default_thresholds() -> list[float]:
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple[float, ...] = tuple(default_thresholds())
    an_grid: tuple[int, ...] = tuple(range(1, 101))
    proposal_recall_thresholds: tuple[float, ...] = tuple(default_thresholds())

    def __post_init__(self):
        for name in ("tiou_thresholds", "an_grid", "proposal_recall_thresholds"):
            vals = list(getattr(self, name))
            object.__setattr__(self, name, tuple(vals))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if any(not (0.0 < t <= 1.0) for t in self.tiou_thresholds + self.proposal_recall_thresholds):
            raise ValueError("tIoU thresholds must lie in (0, 1]")
        if any(a < 1 for a in self.an_grid):
            raise ValueError("AN grid entries must be positive")


def iou_matrix(candidates: Sequence[TemporalSegment], gts: Sequence[TemporalSegment]) -> np.ndarray:
    out = np.zeros((len(candidates), len(gts)))
    if len(candidates) and len(gts):
        starts = np.array([c.start for c in candidates])
        ends = np.array([c.end for c in candidates])
        for gi, g in enumerate(gts):
            out[:, gi] = tiou_array(starts, ends, g.start, g.end)
    return out


def greedy_match_matrix(iou: np.ndarray, thr: float) -> np.ndarray:
    """Walk candidate rows in order; each takes the unmatched GT column with the
    highest tIoU >= thr (lowest index on ties). Returns the matched column per
    row, -1 for none."""
    n, g = iou.shape
    out = np.full(n, -1, dtype=np.int64)
    if g == 0:
        return out
    free = np.ones(g, dtype=bool)
    for row in range(n):
        cand = np.where(free & (iou[row] >= thr), iou[row], -1.0)
        best = int(np.argmax(cand))
        if cand[best] >= 0.0:
            out[row] = best
            free[best] = False
            if not free.any():
                break
    return out


def greedy_match(candidates: Sequence[TemporalSegment], gts: Sequence[TemporalSegment],
                 thr: float) -> list[int]:
    return greedy_match_matrix(iou_matrix(candidates, gts), thr).tolist()


# -- proposals --------------------------------------------------------------

def _cumulative_hits(proposals: dict, gt: GroundTruthDB, thresholds, max_an: int) -> np.ndarray:
    """hits[t, a] = GT instances recalled at threshold t using the top a+1 proposals.

    Greedy matching over the top-AN prefix is the first AN steps of the full
    walk, so one pass per video and threshold covers every AN.
    """
    if gt.n_instances == 0:
        raise NoGroundTruth("ground truth has no instances")
    hits = np.zeros((len(thresholds), max_an), dtype=np.int64)
    for vid in sorted(gt.videos):
        gts = gt[vid].segments
        if not gts:
            continue
        top = [p.segment for p in sort_ranked(proposals.get(vid, []))[:max_an]]
        if not top:
            continue
        iou = iou_matrix(top, gts)
        for ti, thr in enumerate(thresholds):
            matched = (greedy_match_matrix(iou, thr) >= 0).astype(np.int64)
            cum = np.cumsum(matched)
            hits[ti, :len(cum)] += cum
            hits[ti, len(cum):] += cum[-1]
    return hits


def recall_at_an(proposals: dict, gt: GroundTruthDB, an: int, thresholds=None) -> np.ndarray:
    """Recall per tIoU threshold keeping the top ``an`` proposals of each video."""
    thresholds = default_thresholds() if thresholds is None else list(thresholds)
    an = int(np.ceil(an))
    hits = _cumulative_hits(proposals, gt, thresholds, an)
    return hits[:, an - 1] / gt.n_instances


def ar_at_an(proposals: dict, gt: GroundTruthDB, an: int, recall_thresholds=None) -> float:
    if an < 1:
        raise ValueError(f"AN must be >= 1, got {an}")
    return float(np.mean(recall_at_an(proposals, gt, an, recall_thresholds)))


def ar_an_curve(proposals: dict, gt: GroundTruthDB, cfg: EvalConfig = EvalConfig()) -> list[tuple[int, float]]:
    hits = _cumulative_hits(proposals, gt, cfg.proposal_recall_thresholds, max(cfg.an_grid))
    ar = (hits / gt.n_instances).mean(axis=0)
    return [(an, float(ar[an - 1])) for an in cfg.an_grid]


def auc_from_curve(an_values: Sequence[float], ar_values: Sequence[float]) -> float:
    """Trapezoidal area normalised by the AN extent; a flat curve at r gives r."""
    if len(an_values) == 1:
        return float(ar_values[0])
    x = np.asarray(an_values, dtype=np.float64)
    y = np.asarray(ar_values, dtype=np.float64)
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    return area / float(x[-1] - x[0])


def auc_ar_an(proposals: dict, gt: GroundTruthDB, cfg: EvalConfig = EvalConfig()) -> float:
    curve = ar_an_curve(proposals, gt, cfg)
    return auc_from_curve([a for a, _ in curve], [r for _, r in curve])


# -- detections -------------------------------------------------------------

def _det_key(vd):
    vid, d = vd
    return rank_key(d) + (vid,)


def detection_true_positives(dets: Sequence[tuple[str, Detection]], gts: dict[str, list[TemporalSegment]],
                             thr: float) -> np.ndarray:
    """0/1 flags over ``dets`` in rank order; each detection claims the unmatched
    same-video GT with the highest tIoU >= thr."""
    ordered = sorted(dets, key=_det_key)
    taken = {vid: [False] * len(segs) for vid, segs in gts.items()}
    tp = np.zeros(len(ordered))
    for rank, (vid, d) in enumerate(ordered):
        segs = gts.get(vid, [])
        best, best_iou = -1, -1.0
        for gi, g in enumerate(segs):
            if taken[vid][gi]:
                continue
            iou = tiou(d.segment, g)
            if iou >= thr and iou > best_iou:
                best, best_iou = gi, iou
        if best >= 0:
            taken[vid][best] = True
            tp[rank] = 1.0
    return tp


def average_precision(dets: Sequence[tuple[str, Detection]], gts: dict[str, list[TemporalSegment]],
                      thr: float) -> float:
    """Interpolated AP for one class.

    ``dets`` are ``(video_id, detection)`` pairs pooled across videos; ``gts``
    maps video id to that class's ground-truth segments. Precision is replaced
    by its running maximum from the right before summing over recall steps of
    ``1 / n_gt``.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return 0.0
    tp = detection_true_positives(dets, gts, thr)
    if not tp.any():
        return 0.0
    precision = np.cumsum(tp) / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[tp == 1.0]) / n_gt)


def _by_class(detections: dict[str, list[Detection]], gt: GroundTruthDB):
    det_by = {}
    for vid in sorted(detections):
        for d in detections[vid]:
            det_by.setdefault(d.label, []).append((vid, d))
    gt_by = {}
    for vid in sorted(gt.videos):
        for label, seg in gt[vid].annotations:
            gt_by.setdefault(label, {}).setdefault(vid, []).append(seg)
    return det_by, gt_by


def ap_per_class(detections: dict[str, list[Detection]], gt: GroundTruthDB, thr: float) -> dict[str, float]:
    if gt.n_instances == 0:
        raise NoGroundTruth("ground truth has no instances")
    det_by, gt_by = _by_class(detections, gt)
    return {label: average_precision(det_by.get(label, []), gt_by[label], thr) for label in sorted(gt_by)}


def mean_ap(detections: dict[str, list[Detection]], gt: GroundTruthDB, thr: float) -> float:
    aps = ap_per_class(detections, gt, thr)
    return float(np.mean(list(aps.values())))


def average_map(detections: dict[str, list[Detection]], gt: GroundTruthDB,
                cfg: EvalConfig = EvalConfig()) -> float:
    return float(np.mean([mean_ap(detections, gt, thr) for thr in cfg.tiou_thresholds]))


# -- reports ----------------------------------------------------------------

@dataclass
class ProposalReport:
    ar_at_100: float
    auc: float
    curve: list[tuple[int, float]]
    recall_at_100: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"AR@100": self.ar_at_100, "AUC": self.auc,
                "recall@100_per_threshold": self.recall_at_100,
                "AR@AN": {str(an): ar for an, ar in self.curve}}

    def table(self) -> str:
        lines = ["metric        value", "------------  -------",
                 f"AR@100        {100 * self.ar_at_100:6.2f}%", f"AUC           {100 * self.auc:6.2f}%"]
        for an in (1, 5, 10, 50):
            for a, r in self.curve:
                if a == an:
                    lines.append(f"AR@{an:<10d}{100 * r:6.2f}%")
        return "\n".join(lines)


def evaluate_proposals(proposals: dict, gt: GroundTruthDB, cfg: EvalConfig = EvalConfig()) -> ProposalReport:
    curve = ar_an_curve(proposals, gt, cfg)
    ar100 = ar_at_an(proposals, gt, 100, cfg.proposal_recall_thresholds)
    rec = recall_at_an(proposals, gt, 100, cfg.proposal_recall_thresholds)
    return ProposalReport(ar100, auc_from_curve([a for a, _ in curve], [r for _, r in curve]), curve,
                          {f"{t:.2f}": float(r) for t, r in zip(cfg.proposal_recall_thresholds, rec)})


@dataclass
class DetectionReport:
    average_map: float
    map_per_threshold: dict[str, float]
    ap_per_class: dict[str, dict[str, float]]

    def as_dict(self) -> dict:
        return {"average_mAP": self.average_map, "mAP_per_threshold": self.map_per_threshold,
                "AP_per_class": self.ap_per_class}

    def table(self) -> str:
        head = "tIoU   " + "  ".join(f"{t:>5}" for t in self.map_per_threshold)
        vals = "mAP    " + "  ".join(f"{100 * v:5.1f}" for v in self.map_per_threshold.values())
        return f"{head}\n{vals}\naverage mAP: {100 * self.average_map:.2f}%"


def evaluate_detections(detections: dict, gt: GroundTruthDB, cfg: EvalConfig = EvalConfig()) -> DetectionReport:
    per_thr, per_class = {}, {}
    for thr in cfg.tiou_thresholds:
        aps = ap_per_class(detections, gt, thr)
        key = f"{thr:.2f}"
        per_thr[key] = float(np.mean(list(aps.values())))
        for label, ap in aps.items():
            per_class.setdefault(label, {})[key] = ap
    return DetectionReport(float(np.mean(list(per_thr.values()))), per_thr, per_class)


def write_report(report, path) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), indent=2) + "\n")


def write_curve_csv(curve: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["an", "ar"])
        for an, ar in curve:
            w.writerow([an, repr(float(ar))])
