"""Pipeline configuration: nested dataclasses, a YAML file, dotted-name overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from prn.augment import MODES, ShiftSpec
from prn.metrics import EvalConfig, default_thresholds
from prn.postproc import NmsConfig
from prn.propgen import FUSIONS
from prn.relation import COMBINE_MODES


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    output_dir: str = "out"
    features: Optional[str] = None          # default: <output_dir>/features
    annotations: Optional[str] = None       # default: <output_dir>/annotations.json
    classification: Optional[str] = None    # default: <output_dir>/classification.json
    head_weights: Optional[str] = None      # default: <output_dir>/head_weights
    relation_weights: Optional[str] = None  # default: <output_dir>/relation_weights
    proposals: Optional[str] = None         # default: <output_dir>/proposals.json
    detections: Optional[str] = None        # default: <output_dir>/detections.json
    runs: list[str] = field(default_factory=list)
    maps_dirs: list[str] = field(default_factory=list)

    def resolve(self, name: str) -> Path:
        value = getattr(self, name)
        if value:
            return Path(value)
        defaults = {"features": "features", "annotations": "annotations.json",
                    "classification": "classification.json", "head_weights": "head_weights",
                    "relation_weights": "relation_weights", "proposals": "proposals.json",
                    "detections": "detections.json"}
        return Path(self.output_dir) / defaults[name]


@dataclass
class PropgenConfig:
    t: int = 100
    d_max: Optional[int] = None             # None: full square map (d_max = t)
    boundary_ratio: float = 0.5
    max_proposals: int = 100
    fusion: str = "geometric"
    hidden: int = 32                        # head width used when synth writes fresh weights
    save_maps: bool = False


@dataclass
class RelationConfig:
    k: int = 8
    context_ratio: float = 0.5
    d_att: int = 64
    h_r: int = 64
    combine_mode: str = "multiply"
    lr: float = 0.05
    epochs: int = 200


@dataclass
class PostprocConfig:
    sigma: float = 0.4
    score_floor: float = 0.0005
    top_k: int = 100
    top_k_classes: int = 2
    ensemble_level: str = "detections"      # detections | maps
    ensemble_weights: list[float] = field(default_factory=list)  # empty: equal weights


@dataclass
class MetricsConfig:
    tiou_thresholds: list[float] = field(default_factory=default_thresholds)
    recall_thresholds: list[float] = field(default_factory=default_thresholds)
    an_max: int = 100


@dataclass
class AugmentConfig:
    forward_fraction: float = 0.25
    backward_fraction: float = 0.25
    step: int = 1
    mode: str = "append-as-extra-sample"
    in_training: bool = True


@dataclass
class SynthConfig:
    n_videos: int = 50
    c: int = 16
    n_classes: int = 5
    min_gt: int = 1
    max_gt: int = 4


@dataclass
class PipelineConfig:
    seed: int = 0
    parallelism: int = 0                    # 0: one worker per available core
    oracle: bool = False
    paths: PathsConfig = field(default_factory=PathsConfig)
    propgen: PropgenConfig = field(default_factory=PropgenConfig)
    relation: RelationConfig = field(default_factory=RelationConfig)
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    # -- derived module configs --------------------------------------------
    def nms(self) -> NmsConfig:
        p = self.postproc
        return NmsConfig(p.sigma, p.score_floor, p.top_k)

    def shift(self) -> ShiftSpec:
        a = self.augment
        return ShiftSpec(a.forward_fraction, a.backward_fraction, a.step)

    def eval_config(self) -> EvalConfig:
        m = self.metrics
        return EvalConfig(tuple(m.tiou_thresholds), tuple(range(1, m.an_max + 1)), tuple(m.recall_thresholds))

    @property
    def d_max(self) -> int:
        return self.propgen.d_max or self.propgen.t

    def validate(self) -> "PipelineConfig":
        try:
            self.nms()
            self.shift()
            self.eval_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        pg, rel, pp = self.propgen, self.relation, self.postproc
        checks = [
            (pg.t >= 2, f"propgen.t must be >= 2, got {pg.t}"),
            (1 <= self.d_max <= pg.t, f"propgen.d_max must be in [1, t], got {pg.d_max}"),
            (0 < pg.boundary_ratio <= 1, f"propgen.boundary_ratio must be in (0, 1], got {pg.boundary_ratio}"),
            (pg.max_proposals >= 1, "propgen.max_proposals must be >= 1"),
            (pg.fusion in FUSIONS, f"propgen.fusion must be one of {FUSIONS}"),
            (rel.k >= 1 and rel.context_ratio >= 0, "relation.k >= 1 and relation.context_ratio >= 0 required"),
            (rel.d_att >= 1 and rel.h_r >= 1, "relation.d_att and relation.h_r must be positive"),
            (rel.combine_mode in COMBINE_MODES, f"relation.combine_mode must be one of {COMBINE_MODES}"),
            (rel.epochs >= 0 and rel.lr >= 0, "relation.epochs and relation.lr must be non-negative"),
            (pp.top_k_classes >= 1, "postproc.top_k_classes must be >= 1"),
            (pp.ensemble_level in ("detections", "maps"), "postproc.ensemble_level must be detections or maps"),
            (all(w > 0 for w in pp.ensemble_weights), "postproc.ensemble_weights must be positive"),
            (self.augment.mode in MODES, f"augment.mode must be one of {MODES}"),
            (self.parallelism >= 0, "parallelism must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


# -- (de)serialisation ------------------------------------------------------

def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _section_types(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(value, inner, where)
    if origin is list:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, args[0], where) for v in value]
    if tp is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "1", "yes", "on", "false", "0", "no", "off"):
            return value.lower() in ("true", "1", "yes", "on")
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    try:
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {tp.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {tp}")


def leaf_fields(cls=PipelineConfig, prefix: str = "") -> dict[str, Any]:
    """Dotted name -> type for every scalar/list field."""
    out = {}
    for name, tp in _section_types(cls).items():
        if dataclasses.is_dataclass(tp):
            out.update(leaf_fields(tp, f"{prefix}{name}."))
        else:
            out[prefix + name] = tp
    return out


def set_dotted(cfg: PipelineConfig, dotted: str, value) -> None:
    types = leaf_fields()
    if dotted not in types:
        raise ConfigError(f"unknown config key {dotted!r}")
    *parents, leaf = dotted.split(".")
    target = cfg
    for p in parents:
        target = getattr(target, p)
    setattr(target, leaf, _coerce(value, types[dotted], dotted))


def _flatten(doc, prefix=""):
    for key, value in doc.items():
        if isinstance(value, dict):
            yield from _flatten(value, f"{prefix}{key}.")
        else:
            yield prefix + key, value


def from_dict(doc: dict | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if not doc:
        return cfg
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    for dotted, value in _flatten(doc):
        set_dotted(cfg, dotted, value)
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(doc)


def example_text() -> str:
    header = ("# Pipeline configuration with every default spelled out.\n"
              "# Any key can be overridden on the command line by its dotted name,\n"
              "# e.g. --propgen.max_proposals 50 or --relation.combine_mode replace.\n")
    return header + yaml.safe_dump(to_dict(PipelineConfig()), sort_keys=False, default_flow_style=None)
