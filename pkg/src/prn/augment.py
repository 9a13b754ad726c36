"""Temporal channel-shift augmentation of snippet features.

A leading block of channels moves one way along time, the next block the
other way, and the rest stay put; vacated slots are zero-filled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prn.ingest import FeatureSequence

MODES = ("replace", "append-as-extra-sample")
SHIFTED_SUFFIX = "__shift"


class StepTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    forward_fraction: float = 0.25
    backward_fraction: float = 0.25
    step: int = 1

    def __post_init__(self):
        f, b = self.forward_fraction, self.backward_fraction
        if not (0.0 <= f <= 1.0 and 0.0 <= b <= 1.0) or f + b > 1.0:
            raise ValueError(f"shift fractions must be in [0, 1] with sum <= 1, got ({f}, {b})")
        if int(self.step) != self.step or self.step < 1:
            raise ValueError(f"shift step must be a positive integer, got {self.step}")

    def channel_split(self, c: int) -> tuple[int, int]:
        n_fwd = int(np.floor(c * self.forward_fraction))
        n_both = int(np.floor(c * (self.forward_fraction + self.backward_fraction)))
        return n_fwd, max(n_fwd, n_both)


def temporal_shift(seq: FeatureSequence, spec: ShiftSpec = ShiftSpec()) -> FeatureSequence:
    step = int(spec.step)
    if step >= seq.t:
        raise StepTooLarge(f"shift step {step} must be smaller than sequence length {seq.t}")
    x = seq.data
    a, b = spec.channel_split(seq.c)
    out = np.zeros_like(x)
    # forward: row r <- row r - step
    out[step:, :a] = x[:-step, :a]
    # backward: row r <- row r + step
    out[:-step, a:b] = x[step:, a:b]
    out[:, b:] = x[:, b:]
    return FeatureSequence(seq.video_id, out)


def augment_features(features: dict[str, FeatureSequence], spec: ShiftSpec,
                     mode: str = "append-as-extra-sample") -> dict[str, FeatureSequence]:
    """Apply the shift to every video.

    ``replace`` swaps each sequence for its shifted copy;
    ``append-as-extra-sample`` keeps the original and adds the copy under
    ``<video_id>__shift``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}; expected one of {MODES}")
    out = {}
    for vid in sorted(features):
        shifted = temporal_shift(features[vid], spec)
        if mode == "replace":
            out[vid] = shifted
        else:
            out[vid] = features[vid]
            out[vid + SHIFTED_SUFFIX] = FeatureSequence(vid + SHIFTED_SUFFIX, shifted.data)
    return out
