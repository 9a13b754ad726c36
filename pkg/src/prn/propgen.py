"""Boundary-matching confidence maps and proposal decoding.

Map cell ``(d, i)`` scores the candidate ``[i/T, (i+d+1)/T]``, i.e. a
proposal starting at snippet ``i`` and covering ``d + 1`` snippets. Cells
with ``i + d + 1 > T`` fall off the end of the video and are held at 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from prn.core import (
    Proposal,
    ScoreComponents,
    ShapeMismatch,
    TemporalSegment,
    sort_ranked,
    tiou_array,
)
from prn.ingest import FeatureSequence, FormatError
from prn.manifest import load_manifest, save_manifest

FUSIONS = ("geometric", "product", "maps")


def valid_mask(d_max: int, t: int) -> np.ndarray:
    d = np.arange(d_max)[:, None]
    i = np.arange(t)[None, :]
    return i + d + 1 <= t


@dataclass
class ConfidenceMaps:
    p_start: np.ndarray
    p_end: np.ndarray
    m_cc: np.ndarray
    m_cr: np.ndarray

    def __post_init__(self):
        t = len(self.p_start)
        if self.p_end.shape != (t,) or self.m_cc.ndim != 2 or self.m_cc.shape[1] != t \
                or self.m_cr.shape != self.m_cc.shape:
            raise ShapeMismatch(
                f"inconsistent map shapes: p_start {self.p_start.shape}, p_end {self.p_end.shape}, "
                f"m_cc {self.m_cc.shape}, m_cr {self.m_cr.shape}")
        for name in ("p_start", "p_end", "m_cc", "m_cr"):
            arr = getattr(self, name)
            if not (np.all(np.isfinite(arr)) and arr.min(initial=0.0) >= 0.0 and arr.max(initial=0.0) <= 1.0):
                raise ValueError(f"{name} entries must lie in [0, 1]")

    @property
    def t(self) -> int:
        return len(self.p_start)

    @property
    def d_max(self) -> int:
        return self.m_cc.shape[0]

    @classmethod
    def zeros(cls, t: int, d_max: int) -> "ConfidenceMaps":
        return cls(np.zeros(t), np.zeros(t), np.zeros((d_max, t)), np.zeros((d_max, t)))


def _boundary_bumps(indices: Iterable[int], t: int) -> np.ndarray:
    out = np.zeros(t)
    for idx in indices:
        for off, val in ((-1, 0.5), (0, 1.0), (1, 0.5)):
            j = idx + off
            if 0 <= j < t:
                out[j] = max(out[j], val)
    return out


def snippet_index(x: float, t: int) -> int:
    """Nearest snippet boundary to normalized time ``x`` (halves round up)."""
    return int(math.floor(x * t + 0.5))


def oracle_confidence_maps(gt: Iterable[TemporalSegment], t: int, d_max: int | None = None) -> ConfidenceMaps:
    """Maps a perfect proposal network would produce for the given ground truth."""
    d_max = t if d_max is None else d_max
    segs = list(gt)
    maps = ConfidenceMaps.zeros(t, d_max)
    if not segs:
        return maps
    d = np.arange(d_max)[:, None]
    i = np.arange(t)[None, :]
    starts = np.broadcast_to(i / t, (d_max, t))
    ends = (i + d + 1) / t
    best = np.zeros((d_max, t))
    for g in segs:
        np.maximum(best, tiou_array(starts, ends, g.start, g.end), out=best)
    best[~valid_mask(d_max, t)] = 0.0
    maps.m_cc = best
    maps.m_cr = best.copy()
    maps.p_start = _boundary_bumps((snippet_index(g.start, t) for g in segs), t)
    maps.p_end = _boundary_bumps((snippet_index(g.end, t) for g in segs), t)
    return maps


# -- learned head -----------------------------------------------------------

HEAD_TENSORS = {
    "conv1_w": lambda c, h: (h, c, 3),
    "conv1_b": lambda c, h: (h,),
    "conv2_w": lambda c, h: (h, h, 3),
    "conv2_b": lambda c, h: (h,),
    "start_w": lambda c, h: (h,),
    "start_b": lambda c, h: (1,),
    "end_w": lambda c, h: (h,),
    "end_b": lambda c, h: (1,),
    "map_w": lambda c, h: (2, h),
    "map_b": lambda c, h: (2,),
}


@dataclass
class HeadWeights:
    """Two kernel-3 temporal convolutions (ReLU), two sigmoid boundary heads
    and a span-pooled sigmoid map head producing (m_cc, m_cr)."""

    t: int
    c: int
    h: int
    d_max: int
    params: dict[str, np.ndarray]

    def __post_init__(self):
        for name, shape_fn in HEAD_TENSORS.items():
            if name not in self.params:
                raise ShapeMismatch(f"head weights missing tensor {name!r}")
            want = shape_fn(self.c, self.h)
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != want:
                raise ShapeMismatch(f"{name}: expected shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite parameter")
            self.params[name] = arr
        if not (1 <= self.d_max <= self.t):
            raise ShapeMismatch(f"d_max must be in [1, T={self.t}], got {self.d_max}")

    @property
    def dims(self) -> dict:
        return {"t": self.t, "c": self.c, "h": self.h, "d_max": self.d_max}

    @classmethod
    def zeros(cls, t, c, h, d_max=None) -> "HeadWeights":
        return cls(t, c, h, d_max or t, {n: np.zeros(f(c, h)) for n, f in HEAD_TENSORS.items()})

    @classmethod
    def init(cls, t, c, h, d_max=None, seed=0) -> "HeadWeights":
        rng = np.random.default_rng(seed)
        fan_in = {"conv1": 3 * c, "conv2": 3 * h, "start": h, "end": h, "map": h}
        params = {}
        for name, shape_fn in HEAD_TENSORS.items():
            bound = 1.0 / math.sqrt(fan_in[name.split("_")[0]])
            # stored as f32 on disk; keep the in-memory copy representable
            params[name] = rng.uniform(-bound, bound, shape_fn(c, h)).astype(np.float32).astype(np.float64)
        return cls(t, c, h, d_max or t, params)

    def save(self, directory) -> Path:
        return save_manifest(directory, self.dims, self.params)

    @classmethod
    def load(cls, directory) -> "HeadWeights":
        dims, tensors = load_manifest(directory)
        try:
            return cls(int(dims["t"]), int(dims["c"]), int(dims["h"]), int(dims["d_max"]), tensors)
        except KeyError as exc:
            raise FormatError(f"head manifest missing dim {exc}") from None


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _conv1d_same(x, w, b):
    """Kernel-3 convolution over time with zero padding; x is (T, Cin), w is (Cout, Cin, 3)."""
    xp = np.pad(x, ((1, 1), (0, 0)))
    t = x.shape[0]
    out = np.broadcast_to(b, (t, w.shape[0])).copy()
    for k in range(3):
        out += xp[k:k + t] @ w[:, :, k].T
    return out


def forward_head(seq: FeatureSequence, w: HeadWeights) -> ConfidenceMaps:
    if seq.t != w.t or seq.c != w.c:
        raise ShapeMismatch(f"features are {seq.t}x{seq.c} but head expects {w.t}x{w.c}")
    p = w.params
    h1 = np.maximum(_conv1d_same(seq.data, p["conv1_w"], p["conv1_b"]), 0.0)
    h2 = np.maximum(_conv1d_same(h1, p["conv2_w"], p["conv2_b"]), 0.0)
    p_start = _sigmoid(h2 @ p["start_w"] + p["start_b"][0])
    p_end = _sigmoid(h2 @ p["end_w"] + p["end_b"][0])

    t, d_max = w.t, w.d_max
    csum = np.vstack([np.zeros((1, w.h)), np.cumsum(h2, axis=0)])
    d = np.arange(d_max)[:, None]
    i = np.arange(t)[None, :]
    mask = valid_mask(d_max, t)
    stop = np.minimum(i + d + 1, t)
    pooled = (csum[stop] - csum[np.broadcast_to(i, (d_max, t))]) / (d + 1)[..., None]
    logits = pooled @ p["map_w"].T + p["map_b"]
    maps = _sigmoid(logits)
    maps[~mask] = 0.0
    return ConfidenceMaps(p_start, p_end, maps[..., 0].copy(), maps[..., 1].copy())


# -- decoding ---------------------------------------------------------------

def boundary_candidates(p: np.ndarray, ratio: float) -> np.ndarray:
    """Strict local maxima (out-of-range neighbours count as -inf) or values above ratio * max."""
    left = np.concatenate([[-np.inf], p[:-1]])
    right = np.concatenate([p[1:], [-np.inf]])
    peak = (p > left) & (p > right)
    return np.flatnonzero(peak | (p > ratio * p.max(initial=0.0)))


def fuse_score(ps, pe, cc, cr, fusion: str = "geometric") -> float:
    if fusion == "geometric":
        s = ps * pe * math.sqrt(cc * cr)
    elif fusion == "product":
        s = ps * pe * cc * cr
    elif fusion == "maps":
        s = cc * cr
    else:
        raise ValueError(f"unknown score fusion {fusion!r}; expected one of {FUSIONS}")
    return min(1.0, max(0.0, s))


def decode_proposals(maps: ConfidenceMaps, boundary_ratio: float = 0.5,
                     max_proposals: int = 100, fusion: str = "geometric") -> list[Proposal]:
    if not (0.0 < boundary_ratio <= 1.0):
        raise ValueError(f"boundary_ratio must be in (0, 1], got {boundary_ratio}")
    t, d_max = maps.t, maps.d_max
    starts = boundary_candidates(maps.p_start, boundary_ratio)
    ends = boundary_candidates(maps.p_end, boundary_ratio)
    out = []
    for i in starts:
        for j in ends:
            if j <= i or j - i - 1 >= d_max:
                continue
            ps, pe = float(maps.p_start[i]), float(maps.p_end[j])
            cc, cr = float(maps.m_cc[j - i - 1, i]), float(maps.m_cr[j - i - 1, i])
            out.append(Proposal(TemporalSegment(i / t, j / t), fuse_score(ps, pe, cc, cr, fusion),
                                ScoreComponents(ps, pe, cc, cr)))
    return sort_ranked(out)[:max_proposals]


# -- files ------------------------------------------------------------------

def proposal_to_json(p: Proposal) -> dict:
    item = {"segment": [p.segment.start, p.segment.end], "score": p.score}
    if p.raw_components is not None:
        item["components"] = p.raw_components.as_dict()
    if p.refined_score is not None:
        item["refined_score"] = p.refined_score
    return item


def proposal_from_json(item: dict) -> Proposal:
    comps = item.get("components")
    return Proposal(TemporalSegment(*item["segment"]), float(item["score"]),
                    ScoreComponents(**comps) if comps else None, item.get("refined_score"))


def save_proposals(proposals: dict[str, list[Proposal]], path) -> None:
    doc = {vid: [proposal_to_json(p) for p in proposals[vid]] for vid in sorted(proposals)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_proposals(path) -> dict[str, list[Proposal]]:
    doc = json.loads(Path(path).read_text())
    return {vid: [proposal_from_json(it) for it in items] for vid, items in doc.items()}


def save_maps(maps: ConfidenceMaps, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, p_start=maps.p_start, p_end=maps.p_end, m_cc=maps.m_cc, m_cr=maps.m_cr)


def load_maps(path) -> ConfidenceMaps:
    with np.load(path) as z:
        return ConfidenceMaps(z["p_start"], z["p_end"], z["m_cc"], z["m_cr"])
