"""Seeded synthetic videos: features, ground truth and classification scores.

Ground-truth boundaries sit on the snippet grid of a ``t``-snippet video and
never share a snippet index, segments within a video are disjoint, and no
segment ends on the last boundary (``t``) since the end-probability
sequence only covers indices ``0..t-1``. Features carry an actionness signal:
a block of channels reads ~1 inside actions and ~0 outside, the rest is
noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from prn.core import GroundTruthDB, Proposal, TemporalSegment, VideoAnnotations, sort_ranked, to_normalized
from prn.ingest import (
    ClassificationScores,
    FeatureSequence,
    dump_annotations,
    dump_classification,
    save_features,
)
from prn.propgen import ConfidenceMaps, decode_proposals, oracle_confidence_maps, valid_mask
from prn.relation import max_tiou_targets, proposal_features


@dataclass
class SyntheticSet:
    features: dict[str, FeatureSequence]
    gt: GroundTruthDB
    classification: dict[str, ClassificationScores]
    t: int

    def gt_segments(self) -> dict[str, list[TemporalSegment]]:
        return {vid: v.segments for vid, v in self.gt.videos.items()}


def class_names(n: int) -> list[str]:
    return [f"action_{i:02d}" for i in range(n)]


def _boundaries(rng: np.random.Generator, t: int, n_gt: int, min_len: int) -> list[tuple[int, int]]:
    while True:
        pts = np.sort(rng.choice(t, size=2 * n_gt, replace=False))
        pairs = [(int(pts[2 * k]), int(pts[2 * k + 1])) for k in range(n_gt)]
        if all(e - s >= min_len for s, e in pairs):
            return pairs


def make_synthetic(n_videos: int = 50, t: int = 100, c: int = 16, n_classes: int = 5,
                   min_gt: int = 1, max_gt: int = 4, seed: int = 0,
                   action_frac: float = 0.5, noise: float = 0.3) -> SyntheticSet:
    rng = np.random.default_rng(seed)
    labels = class_names(n_classes)
    n_action = max(1, int(round(c * action_frac)))
    features, videos, cls = {}, {}, {}
    for v in range(n_videos):
        vid = f"v_{v:04d}"
        duration = float(np.round(rng.uniform(30.0, 240.0), 2))
        n_gt = int(rng.integers(min_gt, max_gt + 1))
        label = labels[int(rng.integers(n_classes))]
        pairs = _boundaries(rng, t, n_gt, min_len=2)
        anns = [(label, to_normalized((s * duration / t, e * duration / t), duration)) for s, e in pairs]
        videos[vid] = VideoAnnotations(duration, anns)

        inside = np.zeros(t)
        for s, e in pairs:
            inside[s:e] = 1.0
        data = rng.normal(0.0, noise, size=(t, c))
        data[:, :n_action] += inside[:, None]
        features[vid] = FeatureSequence(vid, data)

        scores = rng.uniform(0.0, 0.3, size=n_classes)
        scores[labels.index(label)] = rng.uniform(0.6, 0.95)
        cls[vid] = ClassificationScores(vid, [(lab, float(s)) for lab, s in zip(labels, scores)])
    return SyntheticSet(features, GroundTruthDB(videos), cls, t)


def write_synthetic(data: SyntheticSet, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for vid, seq in data.features.items():
        save_features(seq, feat_dir / f"{vid}.prnf")
    ann = out / "annotations.json"
    ann.write_text(json.dumps(dump_annotations(data.gt), indent=1) + "\n")
    cls = out / "classification.json"
    cls.write_text(json.dumps(dump_classification(data.classification), indent=1) + "\n")
    return {"features": feat_dir, "annotations": ann, "classification": cls}


def noisy_maps(gt: list[TemporalSegment], t: int, rng: np.random.Generator,
               noise: float = 0.5) -> ConfidenceMaps:
    """Oracle maps blended with uniform noise: a stand-in for an imperfect proposal network."""
    m = oracle_confidence_maps(gt, t, t)
    mask = valid_mask(t, t)

    def blend(a):
        return (1.0 - noise) * a + noise * rng.uniform(size=a.shape)

    cc, cr = blend(m.m_cc), blend(m.m_cr)
    cc[~mask] = 0.0
    cr[~mask] = 0.0
    return ConfidenceMaps(blend(m.p_start), blend(m.p_end), cc, cr)


def corrupt_scores(proposals: list[Proposal], rng: np.random.Generator, noise: float) -> list[Proposal]:
    out = [replace(p, score=float(np.clip(p.score + rng.normal(0.0, noise), 0.0, 1.0))) for p in proposals]
    return sort_ranked(out)


def relation_fixture(data: SyntheticSet, seed: int = 0, max_proposals: int = 20,
                     map_noise: float = 0.5, score_noise: float = 0.0, k: int = 8,
                     context_ratio: float = 0.5):
    """Noisy-map proposals per video with max-tIoU targets and pooled features.

    Returns ``(dataset, proposals)`` where ``dataset`` is a list of ``(x, y)``
    in sorted video order.
    """
    rng = np.random.default_rng(seed)
    gts = data.gt_segments()
    dataset, proposals = [], {}
    for vid in sorted(data.features):
        props = decode_proposals(noisy_maps(gts[vid], data.t, rng, map_noise), 0.5, max_proposals)
        if score_noise > 0:
            props = corrupt_scores(props, rng, score_noise)
        if not props:
            continue
        proposals[vid] = props
        x = proposal_features(data.features[vid], props, k, context_ratio)
        dataset.append((x, max_tiou_targets(props, gts[vid])))
    return dataset, proposals
