"""Feature, annotation and classification-score loading.

Binary feature layout (``.prnf``)::

    b"PRNF" | u32 version=1 | u32 T | u32 C | T*C float32, row-major

all little-endian. The CSV variant is one snippet per line, ``C`` floats,
no header.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from prn.core import GroundTruthDB, InvalidSegment, VideoAnnotations, to_normalized

MAGIC = b"PRNF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
DEFAULT_TARGET_T = 100


class FormatError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class FeatureSequence:
    video_id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise FormatError(f"{self.video_id}: features must be a non-empty T x C matrix, "
                              f"got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise FormatError(f"{self.video_id}: non-finite feature value")

    @property
    def t(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]


@dataclass
class ClassificationScores:
    video_id: str
    entries: list[tuple[str, float]]

    def __post_init__(self):
        labels = [lab for lab, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise SchemaError(f"{self.video_id}: duplicate labels in classification scores")
        for lab, score in self.entries:
            if not (0.0 <= score <= 1.0):
                raise ValueError(f"{self.video_id}: score {score} for {lab!r} outside [0, 1]")
        self.entries = sorted(self.entries, key=lambda e: (-e[1], e[0]))

    def top(self, k: int) -> list[tuple[str, float]]:
        return self.entries[:k]


# -- features ---------------------------------------------------------------

def video_id_from_path(path) -> str:
    return Path(path).stem


def load_features(path, video_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    vid = video_id or video_id_from_path(path)
    if path.suffix.lower() == ".csv":
        return FeatureSequence(vid, _read_csv(path))
    return FeatureSequence(vid, _read_binary(path))


def _read_binary(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes) at byte offset 0")
    magic, version, t, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} at byte offset 4")
    if t == 0 or c == 0:
        raise FormatError(f"{path}: shape mismatch: header declares T={t}, C={c}")
    expected = t * c * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: shape mismatch: header declares T={t}, C={c} ({expected} bytes) "
            f"but payload has {len(body)} bytes starting at byte offset {_HEADER.size}")
    data = np.frombuffer(body, dtype="<f4").reshape(t, c)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError(f"{path}: non-finite value at byte offset {_HEADER.size + 4 * int(bad[0])}")
    return data.astype(np.float64)


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}: line {lineno}: expected {width} values, got {len(row)}")
            try:
                vals = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def save_features(seq: FeatureSequence, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, seq.data, delimiter=",", fmt="%.9g")
        return
    data = np.ascontiguousarray(seq.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, seq.t, seq.c))
        fh.write(data.tobytes())


def load_feature_dir(directory) -> dict[str, FeatureSequence]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"features directory not found: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".prnf", ".csv"))
    return {video_id_from_path(p): load_features(p) for p in paths}


def resample_features(seq: FeatureSequence, target_t: int = DEFAULT_TARGET_T) -> FeatureSequence:
    """Linear interpolation of every channel onto ``target_t`` evenly spaced snippets."""
    if target_t < 2:
        raise ValueError(f"target_t must be >= 2, got {target_t}")
    if seq.t == target_t:
        return FeatureSequence(seq.video_id, seq.data.copy())
    if seq.t == 1:
        return FeatureSequence(seq.video_id, np.repeat(seq.data, target_t, axis=0))
    pos = np.linspace(0.0, seq.t - 1, target_t)
    grid = np.arange(seq.t, dtype=np.float64)
    out = np.empty((target_t, seq.c))
    for ch in range(seq.c):
        out[:, ch] = np.interp(pos, grid, seq.data[:, ch])
    # guard against rounding past the channel range
    np.clip(out, seq.data.min(axis=0), seq.data.max(axis=0), out=out)
    return FeatureSequence(seq.video_id, out)


# -- annotations ------------------------------------------------------------

def _read_json(path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None


def parse_annotations(doc) -> GroundTruthDB:
    if not isinstance(doc, dict) or not isinstance(doc.get("database"), dict):
        raise SchemaError('annotation file must be an object with a "database" object')
    videos = {}
    problems = []
    for vid, entry in doc["database"].items():
        if not isinstance(entry, dict) or "duration" not in entry:
            raise SchemaError(f"{vid}: missing duration")
        duration = entry["duration"]
        if not isinstance(duration, (int, float)) or not duration > 0:
            raise SchemaError(f"{vid}: duration must be a positive number, got {duration!r}")
        anns = []
        for idx, ann in enumerate(entry.get("annotations", [])):
            try:
                label = ann["label"]
                s, e = ann["segment"]
            except (KeyError, TypeError, ValueError):
                raise SchemaError(f"{vid}[{idx}]: annotation needs a label and a 2-element segment") from None
            if not isinstance(label, str) or not label:
                raise SchemaError(f"{vid}[{idx}]: label must be a non-empty string")
            try:
                anns.append((label, to_normalized((s, e), duration)))
            except InvalidSegment as exc:
                problems.append(f"{vid}[{idx}] {label!r} {[s, e]}: {exc}")
        videos[vid] = VideoAnnotations(float(duration), anns)
    if problems:
        raise InvalidSegment(f"{len(problems)} invalid annotation(s):\n  " + "\n  ".join(problems))
    return GroundTruthDB(videos)


def load_annotations(path) -> GroundTruthDB:
    return parse_annotations(_read_json(path))


def dump_annotations(gt: GroundTruthDB) -> dict:
    db = {}
    for vid, v in gt.videos.items():
        d = v.duration_seconds
        db[vid] = {"duration": d,
                   "annotations": [{"label": lab, "segment": [seg.start * d, seg.end * d]}
                                   for lab, seg in v.annotations]}
    return {"database": db}


def parse_classification(doc) -> dict[str, ClassificationScores]:
    if not isinstance(doc, dict):
        raise SchemaError("classification file must map video ids to score lists")
    out = {}
    for vid, items in doc.items():
        if not isinstance(items, list):
            raise SchemaError(f"{vid}: expected a list of label/score entries")
        entries = []
        for item in items:
            if isinstance(item, dict):
                label, score = item.get("label"), item.get("score")
            elif isinstance(item, (list, tuple)) and len(item) == 2:
                label, score = item
            else:
                raise SchemaError(f"{vid}: malformed entry {item!r}")
            if not isinstance(label, str) or not isinstance(score, (int, float)):
                raise SchemaError(f"{vid}: malformed entry {item!r}")
            entries.append((label, float(score)))
        out[vid] = ClassificationScores(vid, entries)
    return out


def load_classification(path) -> dict[str, ClassificationScores]:
    return parse_classification(_read_json(path))


def dump_classification(cls: dict[str, ClassificationScores]) -> dict:
    return {vid: [{"label": lab, "score": s} for lab, s in c.entries] for vid, c in cls.items()}
