"""``prn`` command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 shape/validation error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from prn.augment import SHIFTED_SUFFIX, StepTooLarge, augment_features
from prn.config import ConfigError, PipelineConfig, leaf_fields, load_config, set_dotted
from prn.core import InvalidSegment, ShapeMismatch
from prn.ingest import (
    FormatError,
    SchemaError,
    load_annotations,
    load_classification,
    load_feature_dir,
    resample_features,
    save_features,
)
from prn.metrics import NoGroundTruth, evaluate_detections, evaluate_proposals, write_curve_csv, write_report
from prn.postproc import (
    EmptyClassification,
    LengthMismatch,
    ensemble,
    ensemble_maps,
    fuse_classification,
    load_submission,
    save_submission,
    soft_nms,
)
from prn.propgen import (
    HeadWeights,
    decode_proposals,
    forward_head,
    load_maps,
    load_proposals,
    oracle_confidence_maps,
    save_maps,
    save_proposals,
)
from prn.relation import (
    RelationWeights,
    build_training_set,
    feature_dim,
    rescore_proposals,
    train_relation,
)
from prn.synth import make_synthetic, write_synthetic

log = logging.getLogger("prn")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SHAPE = 0, 2, 3, 4

SHIFT_ALIASES = {
    "--shift-forward-frac": "augment.forward_fraction",
    "--shift-backward-frac": "augment.backward_fraction",
    "--shift-step": "augment.step",
}


# -- helpers ----------------------------------------------------------------

def _require(path: Path, what: str, is_dir: bool = False) -> Path:
    ok = path.is_dir() if is_dir else path.is_file()
    if not ok:
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _pmap(cfg: PipelineConfig, fn, items):
    workers = cfg.parallelism or os.cpu_count() or 1
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _features(cfg: PipelineConfig, resample: bool = True):
    feats = load_feature_dir(_require(cfg.paths.resolve("features"), "features directory", is_dir=True))
    if resample:
        feats = {vid: resample_features(seq, cfg.propgen.t) for vid, seq in feats.items()}
    return feats


def _annotations(cfg):
    return load_annotations(_require(cfg.paths.resolve("annotations"), "annotation file"))


def _out(cfg: PipelineConfig, name: str) -> Path:
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> None:
    s = cfg.synth
    data = make_synthetic(s.n_videos, cfg.propgen.t, s.c, s.n_classes, s.min_gt, s.max_gt, seed=cfg.seed)
    paths = write_synthetic(data, cfg.paths.output_dir)
    head = HeadWeights.init(cfg.propgen.t, s.c, cfg.propgen.hidden, cfg.d_max, seed=cfg.seed)
    head.save(Path(cfg.paths.output_dir) / "head_weights")
    print(f"wrote {s.n_videos} videos ({data.gt.n_instances} ground-truth segments) to {paths['features'].parent}")


def cmd_augment(cfg: PipelineConfig) -> None:
    feats = _features(cfg, resample=False)
    out_dir = _out(cfg, "features_augmented")
    out_dir.mkdir(exist_ok=True)
    augmented = augment_features(feats, cfg.shift(), cfg.augment.mode)
    for vid, seq in augmented.items():
        save_features(seq, out_dir / f"{vid}.prnf")
    print(f"wrote {len(augmented)} feature files to {out_dir} (mode {cfg.augment.mode})")


def cmd_propose(cfg: PipelineConfig) -> None:
    pg = cfg.propgen
    if cfg.oracle:
        gt = _annotations(cfg)
        videos = sorted(gt.videos)
        make_maps = lambda vid: oracle_confidence_maps(gt[vid].segments, pg.t, cfg.d_max)  # noqa: E731
    else:
        head = HeadWeights.load(_require(cfg.paths.resolve("head_weights") / "manifest.json", "head weights"))
        if head.t != pg.t:
            raise ShapeMismatch(f"config propgen.t={pg.t} but head weights were built for T={head.t}")
        if head.d_max != cfg.d_max:
            raise ShapeMismatch(f"config d_max={cfg.d_max} but head weights use d_max={head.d_max}")
        feats = _features(cfg)
        videos = sorted(feats)
        make_maps = lambda vid: forward_head(feats[vid], head)  # noqa: E731

    maps_dir = _out(cfg, "maps") if pg.save_maps else None
    if maps_dir:
        maps_dir.mkdir(exist_ok=True)

    def run(vid):
        maps = make_maps(vid)
        if maps_dir:
            save_maps(maps, maps_dir / f"{vid}.npz")
        return decode_proposals(maps, pg.boundary_ratio, pg.max_proposals, pg.fusion)

    props = dict(zip(videos, _pmap(cfg, run, videos)))
    path = _out(cfg, "proposals.json")
    save_proposals(props, path)
    print(f"wrote proposals for {len(props)} videos to {path}")


def cmd_train_relation(cfg: PipelineConfig) -> None:
    rel = cfg.relation
    feats = _features(cfg)
    props = load_proposals(_require(cfg.paths.resolve("proposals"), "proposal file"))
    gt = _annotations(cfg)
    if cfg.augment.in_training:
        feats = augment_features(feats, cfg.shift(), cfg.augment.mode)
    gts = {vid: gt[vid].segments for vid in gt.videos}
    dataset = build_training_set(feats, props, gts, rel.k, rel.context_ratio,
                                 source_of=lambda vid: vid.removesuffix(SHIFTED_SUFFIX))
    if not dataset:
        raise ValueError("no training samples: no video has both proposals and ground truth")
    result = train_relation(dataset, rel.lr, rel.epochs, cfg.seed, rel.d_att, rel.h_r)
    wdir = _out(cfg, "relation_weights")
    result.weights.save(wdir)
    trace = _out(cfg, "relation_loss.csv")
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mse"])
        for epoch, mse in enumerate(result.loss_trace):
            w.writerow([epoch, repr(mse)])
    print(f"trained on {len(dataset)} samples: mse {result.loss_trace[0]:.6f} -> {result.loss_trace[-1]:.6f}")
    print(f"weights in {wdir}, loss trace in {trace}")


def cmd_relate(cfg: PipelineConfig) -> None:
    rel = cfg.relation
    w = RelationWeights.load(_require(cfg.paths.resolve("relation_weights") / "manifest.json", "relation weights"))
    if w.d_in != feature_dim(rel.k):
        raise ShapeMismatch(f"relation.k={rel.k} gives d_in={feature_dim(rel.k)} but weights expect {w.d_in}")
    feats = _features(cfg)
    props = load_proposals(_require(cfg.paths.resolve("proposals"), "proposal file"))
    videos = sorted(v for v in props if props[v])
    missing = [v for v in videos if v not in feats]
    if missing:
        raise FileNotFoundError(f"no features for videos {missing[:5]}")

    def run(vid):
        return rescore_proposals(props[vid], feats[vid], w, rel.combine_mode, rel.k, rel.context_ratio)

    out = {vid: [] for vid in props}
    out.update(zip(videos, _pmap(cfg, run, videos)))
    path = _out(cfg, "proposals_relation.json")
    save_proposals(out, path)
    print(f"rescored proposals for {len(videos)} videos ({rel.combine_mode}) -> {path}")


def cmd_detect(cfg: PipelineConfig) -> None:
    props = load_proposals(_require(cfg.paths.resolve("proposals"), "proposal file"))
    cls = load_classification(_require(cfg.paths.resolve("classification"), "classification file"))
    gt = _annotations(cfg)
    nms = cfg.nms()
    missing = [v for v in props if v not in cls]
    if missing:
        raise SchemaError(f"no classification scores for videos {missing[:5]}")
    videos = sorted(props)
    dets = dict(zip(videos, _pmap(cfg, lambda vid: fuse_classification(
        soft_nms(props[vid], nms), cls[vid], cfg.postproc.top_k_classes), videos)))
    path = _out(cfg, "detections.json")
    save_submission(dets, gt.durations(), path)
    print(f"wrote detections for {len(dets)} videos to {path}")


def cmd_ensemble(cfg: PipelineConfig) -> None:
    pp = cfg.postproc
    sources = cfg.paths.maps_dirs if pp.ensemble_level == "maps" else cfg.paths.runs
    if not sources:
        raise ConfigError(f"ensemble needs paths.{'maps_dirs' if pp.ensemble_level == 'maps' else 'runs'}")
    weights = pp.ensemble_weights or [1.0] * len(sources)
    if len(weights) != len(sources):
        raise LengthMismatch(f"{len(sources)} runs but {len(weights)} ensemble weights")
    if pp.ensemble_level == "maps":
        dirs = [_require(Path(d), "maps directory", is_dir=True) for d in sources]
        videos = sorted({p.stem for p in dirs[0].glob("*.npz")})

        def run(vid):
            maps = ensemble_maps([load_maps(_require(d / f"{vid}.npz", "maps file")) for d in dirs], weights)
            pg = cfg.propgen
            return decode_proposals(maps, pg.boundary_ratio, pg.max_proposals, pg.fusion)

        props = dict(zip(videos, _pmap(cfg, run, videos)))
        path = _out(cfg, "proposals_ensemble.json")
        save_proposals(props, path)
    else:
        gt = _annotations(cfg)
        runs = [load_submission(_require(Path(r), "detection file"), gt) for r in sources]
        path = _out(cfg, "detections_ensemble.json")
        save_submission(ensemble(runs, weights, cfg.nms()), gt.durations(), path)
    print(f"ensembled {len(sources)} runs ({pp.ensemble_level}) -> {path}")


def cmd_eval_proposals(cfg: PipelineConfig) -> None:
    props = load_proposals(_require(cfg.paths.resolve("proposals"), "proposal file"))
    gt = _annotations(cfg)
    report = evaluate_proposals(props, gt, cfg.eval_config())
    write_report(report, _out(cfg, "proposal_report.json"))
    write_curve_csv(report.curve, _out(cfg, "ar_an_curve.csv"))
    print(report.table())


def cmd_eval_detections(cfg: PipelineConfig) -> None:
    gt = _annotations(cfg)
    dets = load_submission(_require(cfg.paths.resolve("detections"), "detection file"), gt)
    report = evaluate_detections(dets, gt, cfg.eval_config())
    write_report(report, _out(cfg, "detection_report.json"))
    print(report.table())


COMMANDS = {
    "synth": (cmd_synth, "generate the seeded synthetic dataset"),
    "augment": (cmd_augment, "write temporally shifted copies of the features"),
    "propose": (cmd_propose, "confidence maps -> proposals (learned head or --oracle)"),
    "relate": (cmd_relate, "rescore proposals with the relation module"),
    "train-relation": (cmd_train_relation, "train the relation module on proposals + ground truth"),
    "detect": (cmd_detect, "soft-NMS and classification fusion -> submission JSON"),
    "ensemble": (cmd_ensemble, "combine several runs (detection lists or confidence maps)"),
    "eval-proposals": (cmd_eval_proposals, "AR@AN and AUC"),
    "eval-detections": (cmd_eval_detections, "mAP per tIoU threshold and average mAP"),
}


# -- argument parsing -------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", dest="seed", default=argparse.SUPPRESS)
    p.add_argument("--parallelism", dest="parallelism", default=argparse.SUPPRESS)
    p.add_argument("--oracle", dest="oracle", action="store_const", const="true", default=argparse.SUPPRESS,
                   help="use ground-truth confidence maps instead of the learned head")
    p.add_argument("-v", "--verbose", action="store_true")
    for flag, dotted in SHIFT_ALIASES.items():
        p.add_argument(flag, dest=dotted, default=argparse.SUPPRESS, help=f"alias for --{dotted}")
    for dotted in leaf_fields():
        if "." in dotted:
            p.add_argument(f"--{dotted}", dest=dotted, default=argparse.SUPPRESS, metavar="VALUE")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="prn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    known = leaf_fields()
    for dest, value in vars(args).items():
        if dest in known:
            set_dotted(cfg, dest, value)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        cfg = resolve_config(args)
        COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"prn {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShapeMismatch, InvalidSegment, FormatError, SchemaError, StepTooLarge, EmptyClassification,
            LengthMismatch, NoGroundTruth, ValueError, KeyError) as exc:
        print(f"prn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"prn {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
