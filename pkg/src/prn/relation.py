"""Self-attention rescoring over a video's proposal set.

Each proposal becomes a vector of pooled snippet features (span plus left
and right context) and its geometry/score. A single attention head mixes
information across proposals, a residual connection keeps the proposal's
own vector, and a small MLP maps the result to a refined confidence::

    A = softmax(x Wq (x Wk)^T / sqrt(d_att))
    h = x + (A x Wv) Wo
    score = sigmoid(relu(h W1 + b1) W2 + b2)

Forward and backward are written out by hand in numpy so the gradients can
be checked against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from prn.core import Proposal, ShapeMismatch, TemporalSegment, sort_ranked, tiou
from prn.ingest import FeatureSequence, FormatError
from prn.manifest import load_manifest, save_manifest

COMBINE_MODES = ("replace", "multiply", "average")
PARAM_NAMES = ("w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2")


class DivergenceError(RuntimeError):
    pass


def feature_dim(k: int) -> int:
    return 3 * k + 3


# -- proposal features ------------------------------------------------------

def _window_bins(cum: np.ndarray, t: int, a: float, b: float, k: int) -> np.ndarray:
    """Means of the piecewise-constant snippet signal over k equal bins of [a, b]."""
    if b - a <= 0.0:
        return np.zeros(k)
    knots = np.arange(t + 1, dtype=np.float64)
    edges = np.interp(np.linspace(a, b, k + 1) * t, knots, cum)
    widths = (b - a) * t / k
    return np.diff(edges) / widths


def _cumulative(seq: FeatureSequence) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(seq.data.mean(axis=1))])


def pool_proposal_feature(seq: FeatureSequence, p: Proposal, k: int = 8,
                          context_ratio: float = 0.5, _cum=None) -> np.ndarray:
    if k < 1 or context_ratio < 0:
        raise ValueError("need k >= 1 and context_ratio >= 0")
    cum = _cumulative(seq) if _cum is None else _cum
    s, e = p.segment.start, p.segment.end
    ctx = context_ratio * (e - s)
    return np.concatenate([
        _window_bins(cum, seq.t, s, e, k),
        _window_bins(cum, seq.t, max(0.0, s - ctx), s, k),
        _window_bins(cum, seq.t, e, min(1.0, e + ctx), k),
        [p.segment.center, p.segment.length, p.score],
    ])


def proposal_features(seq: FeatureSequence, proposals: Sequence[Proposal], k: int = 8,
                      context_ratio: float = 0.5) -> np.ndarray:
    cum = _cumulative(seq)
    if not proposals:
        return np.zeros((0, feature_dim(k)))
    return np.stack([pool_proposal_feature(seq, p, k, context_ratio, _cum=cum) for p in proposals])


def max_tiou_targets(proposals: Sequence[Proposal], gt: Sequence[TemporalSegment]) -> np.ndarray:
    return np.array([max((tiou(p.segment, g) for g in gt), default=0.0) for p in proposals])


# -- weights ----------------------------------------------------------------

@dataclass
class RelationWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d_in, d_att = self.w_q.shape
        h_r = self.w1.shape[1]
        want = {"w_q": (d_in, d_att), "w_k": (d_in, d_att), "w_v": (d_in, d_att),
                "w_o": (d_att, d_in), "w1": (d_in, h_r), "b1": (h_r,), "w2": (h_r, 1), "b2": (1,)}
        for name, shape in want.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite parameter")

    @property
    def d_in(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_att(self) -> int:
        return self.w_q.shape[1]

    @property
    def h_r(self) -> int:
        return self.w1.shape[1]

    @property
    def dims(self) -> dict:
        return {"d_in": self.d_in, "d_att": self.d_att, "h_r": self.h_r}

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "RelationWeights":
        return RelationWeights(**{n: a.copy() for n, a in self.params().items()})

    @classmethod
    def init(cls, d_in: int, d_att: int = 64, h_r: int = 64, seed: int = 0) -> "RelationWeights":
        """Uniform in +-1/sqrt(d_in) from a seeded PCG64 generator; zero biases.

        Values are rounded to float32 so a saved initialisation reloads exactly.
        """
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(d_in)

        def u(*shape):
            return rng.uniform(-bound, bound, shape).astype(np.float32).astype(np.float64)

        return cls(w_q=u(d_in, d_att), w_k=u(d_in, d_att), w_v=u(d_in, d_att), w_o=u(d_att, d_in),
                   w1=u(d_in, h_r), b1=np.zeros(h_r), w2=u(h_r, 1), b2=np.zeros(1))

    def save(self, directory):
        return save_manifest(directory, self.dims, self.params())

    @classmethod
    def load(cls, directory) -> "RelationWeights":
        dims, tensors = load_manifest(directory)
        missing = [n for n in PARAM_NAMES if n not in tensors]
        if missing:
            raise FormatError(f"relation manifest missing tensors {missing}")
        w = cls(**{n: tensors[n] for n in PARAM_NAMES})
        if dims and {k: int(v) for k, v in dims.items()} != w.dims:
            raise ShapeMismatch(f"manifest dims {dims} disagree with tensors {w.dims}")
        return w


# -- forward / backward -----------------------------------------------------

@dataclass
class AttentionCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    mixed: np.ndarray
    h: np.ndarray
    z1: np.ndarray
    r: np.ndarray
    scores: np.ndarray
    weights: RelationWeights = field(repr=False)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def attention_forward(x: np.ndarray, w: RelationWeights) -> tuple[np.ndarray, AttentionCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != w.d_in:
        raise ShapeMismatch(f"expected an N x {w.d_in} input with N >= 1, got {x.shape}")
    q, k, v = x @ w.w_q, x @ w.w_k, x @ w.w_v
    attn = softmax_rows(q @ k.T / math.sqrt(w.d_att))
    mixed = attn @ v
    h = x + mixed @ w.w_o
    z1 = h @ w.w1 + w.b1
    r = np.maximum(z1, 0.0)
    scores = _sigmoid((r @ w.w2)[:, 0] + w.b2[0])
    return scores, AttentionCache(x, q, k, v, attn, mixed, h, z1, r, scores, w)


def attention_backward(cache: AttentionCache, d_scores: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of ``sum(d_scores * scores)`` w.r.t. every parameter and the input ``x``."""
    w = cache.weights
    d_scores = np.asarray(d_scores, dtype=np.float64)
    if d_scores.shape != cache.scores.shape:
        raise ShapeMismatch(f"d_scores has shape {d_scores.shape}, expected {cache.scores.shape}")
    s = cache.scores
    du = (d_scores * s * (1.0 - s))[:, None]             # N x 1
    g_w2 = cache.r.T @ du
    g_b2 = du.sum(axis=0)
    dz1 = (du @ w.w2.T) * (cache.z1 > 0.0)
    g_w1 = cache.h.T @ dz1
    g_b1 = dz1.sum(axis=0)
    dh = dz1 @ w.w1.T

    g_wo = cache.mixed.T @ dh
    dmixed = dh @ w.w_o.T
    dattn = dmixed @ cache.v.T
    dv = cache.attn.T @ dmixed
    a = cache.attn
    dlogits = a * (dattn - (dattn * a).sum(axis=1, keepdims=True))
    scale = 1.0 / math.sqrt(w.d_att)
    dq = dlogits @ cache.k * scale
    dk = dlogits.T @ cache.q * scale

    x = cache.x
    dx = dh + dq @ w.w_q.T + dk @ w.w_k.T + dv @ w.w_v.T
    return {"w_q": x.T @ dq, "w_k": x.T @ dk, "w_v": x.T @ dv, "w_o": g_wo,
            "w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2, "x": dx}


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    weights: RelationWeights
    initial_weights: RelationWeights
    loss_trace: list[float]


def dataset_mse(dataset, w: RelationWeights) -> float:
    total, count = 0.0, 0
    for x, y in dataset:
        s, _ = attention_forward(x, w)
        total += float(np.sum((s - y) ** 2))
        count += len(y)
    return total / count


def train_relation(dataset, lr: float = 0.05, epochs: int = 200, seed: int = 0,
                   d_att: int = 64, h_r: int = 64,
                   init: RelationWeights | None = None) -> TrainResult:
    """Gradient descent on per-video MSE, one full-batch step per video.

    ``dataset`` is a sequence of ``(x, target)`` pairs visited in the given
    order every epoch. ``loss_trace[0]`` is the MSE over all proposals at
    initialisation and ``loss_trace[e]`` the MSE after epoch ``e``.
    """
    dataset = [(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)) for x, y in dataset]
    if not dataset:
        raise ValueError("training set is empty")
    d_in = dataset[0][0].shape[1]
    for x, y in dataset:
        if x.ndim != 2 or x.shape[1] != d_in or x.shape[0] != len(y) or len(y) == 0:
            raise ShapeMismatch("every sample needs an N x d_in matrix and N targets with N >= 1")
        if np.any((y < 0) | (y > 1)):
            raise ValueError("targets must lie in [0, 1]")
    w0 = init.copy() if init is not None else RelationWeights.init(d_in, d_att, h_r, seed)
    w = w0.copy()
    trace = [dataset_mse(dataset, w)]
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            for x, y in dataset:
                s, cache = attention_forward(x, w)
                grads = attention_backward(cache, 2.0 * (s - y) / len(y))
                for name in PARAM_NAMES:
                    getattr(w, name)[...] -= lr * grads[name]
            loss = dataset_mse(dataset, w)
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch + 1}")
            trace.append(loss)
    return TrainResult(w, w0, trace)


def build_training_set(features: dict[str, FeatureSequence], proposals: dict[str, list[Proposal]],
                       gt_segments: dict[str, list[TemporalSegment]], k: int = 8,
                       context_ratio: float = 0.5, source_of=lambda vid: vid):
    """(x, target) pairs in sorted video order; ``source_of`` maps an augmented
    video id back to the id whose proposals and ground truth it shares."""
    out = []
    for vid in sorted(features):
        src = source_of(vid)
        props = proposals.get(src, [])
        if not props or src not in gt_segments:
            continue
        x = proposal_features(features[vid], props, k, context_ratio)
        out.append((x, max_tiou_targets(props, gt_segments[src])))
    return out


# -- rescoring --------------------------------------------------------------

def combine(original: float, refined: float, mode: str) -> float:
    if mode == "multiply":
        return original * refined
    if mode == "replace":
        return refined
    if mode == "average":
        return 0.5 * (original + refined)
    raise ValueError(f"unknown combine mode {mode!r}; expected one of {COMBINE_MODES}")


def apply_refined(proposals: Sequence[Proposal], refined: Sequence[float],
                  combine_mode: str = "multiply") -> list[Proposal]:
    out = [replace(p, score=min(1.0, combine(p.score, float(r), combine_mode)), refined_score=float(r))
           for p, r in zip(proposals, refined)]
    return sort_ranked(out)


def rescore_proposals(proposals: Sequence[Proposal], seq: FeatureSequence, w: RelationWeights,
                      combine_mode: str = "multiply", k: int = 8,
                      context_ratio: float = 0.5) -> list[Proposal]:
    if not proposals:
        raise ValueError("cannot rescore an empty proposal list")
    if feature_dim(k) != w.d_in:
        raise ShapeMismatch(f"k={k} gives {feature_dim(k)}-dim features but weights expect {w.d_in}")
    refined, _ = attention_forward(proposal_features(seq, proposals, k, context_ratio), w)
    return apply_refined(proposals, refined, combine_mode)
