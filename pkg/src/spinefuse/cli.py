"""Command-line driver: fuse, label, eval, phantom and the end-to-end pipeline.

Exit codes::

    0  success (evaluation never fails on low scores)
    2  unreadable input, schema violation or invalid configuration
    3  grid mismatch between inputs
    4  no reference vertebra found
    5  label sequence overflow or ambiguous spine region
    6  duplicate vertebra label

Ensemble thresholds and the region can also come from a config file of
``key = value`` lines named after the long flags (``match-iou-threshold =
0.2``). ``--config`` selects the file, otherwise ``$VERTX_CONFIG`` is used
when set. Flags on the command line win over the file.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

from . import interchange as io
from .ensemble import EnsembleConfig, fuse
from .errors import (
    AmbiguousRegion,
    ConfigInvalid,
    DuplicateLabel,
    EmptyInput,
    GridMismatch,
    NoReferenceFound,
    SchemaError,
    SequenceOverflow,
)
from .evaluation import GroundTruthSet, aggregate, render_table, report_to_dict, score_image
from .labeling import SpineRegion, label_instances
from .phantom import PhantomConfig, generate

log = logging.getLogger("spinefuse")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GRID = 3
EXIT_NO_REFERENCE = 4
EXIT_SEQUENCE = 5
EXIT_DUPLICATE = 6

_EXIT_CODES = [
    (SchemaError, EXIT_INPUT),
    (ConfigInvalid, EXIT_INPUT),
    (GridMismatch, EXIT_GRID),
    (NoReferenceFound, EXIT_NO_REFERENCE),
    (EmptyInput, EXIT_NO_REFERENCE),
    (SequenceOverflow, EXIT_SEQUENCE),
    (AmbiguousRegion, EXIT_SEQUENCE),
    (DuplicateLabel, EXIT_DUPLICATE),
]

# config key -> (EnsembleConfig field, parser)
_ENSEMBLE_KEYS = {
    "match-iou-threshold": ("match_iou_threshold", float),
    "min-component-area": ("min_component_area", int),
    "min-orphan-score": ("min_orphan_score", float),
    "max-fill-ratio": ("max_fill_ratio", float),
}
_CONFIG_KEYS = set(_ENSEMBLE_KEYS) | {"region"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config file {path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        parser.read_string("[spinefuse]\n" + text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"config file {path}: {exc}") from exc
    values = dict(parser["spinefuse"])
    unknown = sorted(set(values) - _CONFIG_KEYS)
    if unknown:
        raise ConfigInvalid(f"config file {path}: unknown key(s) {', '.join(unknown)}")
    return values


def _settings(args) -> dict[str, str]:
    path = getattr(args, "config", None) or os.environ.get("VERTX_CONFIG")
    values = load_config_file(path) if path else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            values[key] = str(flag)
    return values


def ensemble_config(args) -> EnsembleConfig:
    values = _settings(args)
    kwargs = {}
    for key, (name, parse) in _ENSEMBLE_KEYS.items():
        if key in values:
            try:
                kwargs[name] = parse(values[key])
            except ValueError:
                raise ConfigInvalid(f"{key}: cannot parse {values[key]!r}") from None
    cfg = EnsembleConfig(**kwargs)
    cfg.validate()
    return cfg


def spine_region(args) -> SpineRegion:
    name = _settings(args).get("region", "auto")
    try:
        return SpineRegion(name.strip().lower())
    except ValueError:
        raise ConfigInvalid(f"region: expected cervical, lumbar or auto, got {name!r}") from None


# --- stages ---------------------------------------------------------------

def _fuse_files(semantic_path, instances_path, cfg: EnsembleConfig):
    sem_id, semantic = io.read_semantic(semantic_path)
    inst = io.read_instance_set(instances_path)
    if semantic.mask.grid != inst.grid:
        g, h = semantic.mask.grid, inst.grid
        raise GridMismatch(f"semantic mask is {g.width}x{g.height}, instances are {h.width}x{h.height}")
    fused = fuse(semantic, inst.instances(), cfg)
    return inst.image_id or sem_id, inst.grid, fused


def _label(image_id, grid, fused, region: SpineRegion) -> dict:
    resolved, labeled = label_instances(fused, region)
    return io.labeled_to_doc(image_id, resolved, grid, labeled)


def _evaluate(pred_sets, gt_sets):
    scores = []
    for pred, gt in zip(pred_sets, gt_sets):
        truth = GroundTruthSet(gt.image_id, gt.grid, gt.vertebrae)
        scores.append(score_image(pred.vertebrae, truth))
    report = aggregate(scores)
    region = gt_sets[0].region if len({g.region for g in gt_sets}) == 1 else SpineRegion.AUTO
    doc = report_to_dict(report)
    doc["images"] = [g.image_id for g in gt_sets]
    return report, region, doc


# --- commands -------------------------------------------------------------

def cmd_fuse(args) -> int:
    image_id, grid, fused = _fuse_files(args.semantic, args.instances, ensemble_config(args))
    io.write_json(args.out, io.instances_to_doc(image_id, grid, fused))
    log.info("fused %d vertebra instance(s) -> %s", len(fused), args.out)
    return EXIT_OK


def cmd_label(args) -> int:
    inst = io.read_instance_set(args.instances)
    doc = _label(inst.image_id, inst.grid, inst.fused(), spine_region(args))
    io.write_json(args.out, doc)
    log.info("labeled %d vertebra(e) as %s -> %s", len(doc["vertebrae"]), doc["region"], args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise CliError(EXIT_INPUT, f"got {len(args.pred)} --pred file(s) but {len(args.gt)} --gt file(s)")
    preds = [io.read_labeled(p) for p in args.pred]
    gts = [io.read_labeled(g) for g in args.gt]
    report, region, doc = _evaluate(preds, gts)
    io.write_json(args.out, doc)
    if args.csv:
        Path(args.csv).write_text(render_table(report, region, "csv"))
    sys.stdout.write(render_table(report, region, "text"))
    return EXIT_OK


def cmd_phantom(args) -> int:
    region = SpineRegion(args.region)
    cfg = PhantomConfig(
        seed=args.seed,
        region=region,
        n_vertebrae=args.n_vertebrae,
        width=args.width,
        height=args.height,
        merge_pairs=args.merge_pairs,
        dropout=args.dropout,
        boundary_noise=args.boundary_noise,
    )
    truth = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_id = truth.ground_truth.image_id
    grid = truth.ground_truth.grid
    if args.semantic_format == "png":
        io.write_semantic_png(out / "semantic.png", truth.semantic)
    else:
        io.write_json(out / "semantic.json", io.semantic_to_doc(image_id, truth.semantic))
    io.write_json(out / "instances.json", io.instances_to_doc(image_id, grid, truth.instances))
    io.write_json(out / "ground_truth.json", io.labeled_to_doc(image_id, region, grid, truth.ground_truth.vertebrae))
    io.write_json(out / "manifest.json", truth.manifest)
    log.info("wrote phantom %s to %s", image_id, out)
    return EXIT_OK


def _phantom_inputs(args) -> None:
    if not args.phantom_dir:
        return
    root = Path(args.phantom_dir)
    if args.semantic is None:
        png, js = root / "semantic.png", root / "semantic.json"
        args.semantic = png if png.exists() else js
    if args.instances is None:
        args.instances = root / "instances.json"
    if args.gt is None and (root / "ground_truth.json").exists():
        args.gt = root / "ground_truth.json"


def cmd_pipeline(args) -> int:
    _phantom_inputs(args)
    if args.semantic is None or args.instances is None:
        raise CliError(EXIT_INPUT, "pipeline needs --semantic and --instances (or --phantom-dir)")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    image_id, grid, fused = _fuse_files(args.semantic, args.instances, ensemble_config(args))
    io.write_json(out / "fused.json", io.instances_to_doc(image_id, grid, fused))

    labeled = _label(image_id, grid, fused, spine_region(args))
    io.write_json(out / "labeled.json", labeled)

    if args.gt is None:
        log.warning("no ground truth given; skipping evaluation")
        return EXIT_OK
    pred = io.parse_labeled(labeled)
    gt = io.read_labeled(args.gt)
    report, region, doc = _evaluate([pred], [gt])
    io.write_json(out / "report.json", doc)
    (out / "report.csv").write_text(render_table(report, region, "csv"))
    sys.stdout.write(render_table(report, region, "text"))
    return EXIT_OK


# --- argument parsing -----------------------------------------------------

def _add_ensemble_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file (default: $VERTX_CONFIG)")
    p.add_argument("--match-iou-threshold", type=float, help="minimum IoU to match an instance to a component (0.10)")
    p.add_argument("--min-component-area", type=int, help="smallest semantic-only component kept, in pixels (100)")
    p.add_argument("--min-orphan-score", type=float, help="smallest score for an unmatched instance to be kept (0.50)")
    p.add_argument("--max-fill-ratio", type=float, help="largest semantic-only component, as a multiple of the median matched area (3.0)")


def _add_region_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--region", choices=[r.value for r in SpineRegion], help="spine region (default: auto)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinefuse",
        description="Fuse, label and score vertebra segmentations.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse a semantic mask with an instance set")
    p.add_argument("--semantic", type=Path, required=True, help="semantic mask (PNG or RLE JSON)")
    p.add_argument("--instances", type=Path, required=True, help="instance-set JSON")
    p.add_argument("--out", type=Path, required=True, help="fused instance-set JSON to write")
    _add_ensemble_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("label", help="assign vertebra labels to a (fused) instance set")
    p.add_argument("--instances", type=Path, required=True)
    _add_region_flag(p)
    p.add_argument("--config", type=Path, help="key = value config file (default: $VERTX_CONFIG)")
    p.add_argument("--out", type=Path, required=True, help="labeled-output JSON to write")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="per-vertebra Dice of labeled predictions against ground truth")
    p.add_argument("--pred", type=Path, nargs="+", required=True, help="labeled prediction JSON file(s)")
    p.add_argument("--gt", type=Path, nargs="+", required=True, help="ground-truth JSON file(s), same order as --pred")
    p.add_argument("--out", type=Path, required=True, help="report JSON to write")
    p.add_argument("--csv", type=Path, help="also write the per-vertebra table as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("phantom", help="write a synthetic spine with corrupted model outputs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--region", choices=["cervical", "lumbar"], required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-vertebrae", type=int, help="default 7 cervical, 8 lumbar")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--merge-pairs", type=int, default=0, help="adjacent pairs fused in the semantic mask")
    p.add_argument("--dropout", type=int, default=0, help="non-reference vertebrae removed from the instances")
    p.add_argument("--boundary-noise", type=int, default=0, help="max dilation/erosion radius of instance masks")
    p.add_argument("--semantic-format", choices=["png", "rle"], default="png")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("pipeline", help="fuse -> label -> eval, keeping every stage's output")
    p.add_argument("--semantic", type=Path)
    p.add_argument("--instances", type=Path)
    p.add_argument("--gt", type=Path, help="ground truth; evaluation is skipped without it")
    p.add_argument("--phantom-dir", type=Path, help="take missing inputs from a `phantom` output directory")
    _add_region_flag(p)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_ensemble_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except tuple(cls for cls, _ in _EXIT_CODES) as exc:
        code = next(c for cls, c in _EXIT_CODES if isinstance(exc, cls))
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
