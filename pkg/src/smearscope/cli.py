"""``smearscope`` command line.

Exit codes: 0 success, 1 usage error, 2 processing error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .classification import (TrainConfig, load_model, save_model, train_ssc, train_tsc)
from .dataset import ManifestError, SynthConfig, generate_corpus, load_manifest
from .evaluation import (cell_dataset, evaluate_classification, evaluate_localization,
                         split_dataset)
from .imaging import StructuringElement, decode_image, read_image, write_png
from .pipeline import analyze_image, draw_boxes, image_id_for_bytes, render_overlay
from .preprocess import PreprocessConfig, preprocess_field
from .segmentation import SegmentationConfig, localize_cells

log = logging.getLogger("smearscope")

EXIT_OK, EXIT_USAGE, EXIT_PROCESSING = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _seg_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("segmentation")
    d = SegmentationConfig()
    g.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"), default=list(d.grid))
    g.add_argument("--open-radius", type=int, default=d.open_se.radius)
    g.add_argument("--erode-radius", type=int, default=d.erode_se.radius)
    g.add_argument("--erode-iters", type=int, default=d.erode_iters)
    g.add_argument("--marker-fraction", type=float, default=d.marker_fraction)
    g.add_argument("--min-area-fraction", type=float, default=d.min_area_fraction)
    return p


def _pre_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("vignette removal")
    d = PreprocessConfig()
    g.add_argument("--dark-cutoff", type=int, default=d.dark_cutoff)
    g.add_argument("--ratio-cutoff", type=float, default=d.ratio_cutoff)
    g.add_argument("--skip-vignette", action="store_true")
    return p


def _train_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("training")
    d = TrainConfig()
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--l2", type=float, default=d.l2)
    return p


def seg_config(args) -> SegmentationConfig:
    try:
        return SegmentationConfig(
            grid=tuple(args.grid),
            open_se=StructuringElement("disk", args.open_radius),
            erode_se=StructuringElement("disk", args.erode_radius),
            erode_iters=args.erode_iters,
            marker_fraction=args.marker_fraction,
            min_area_fraction=args.min_area_fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def pre_config(args) -> PreprocessConfig:
    return PreprocessConfig(args.dark_cutoff, args.ratio_cutoff, args.skip_vignette)


def train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, l2=args.l2, seed=args.seed)


def _load_model(path):
    path = path or os.environ.get("SMEARSCOPE_MODEL")
    if not path:
        raise UsageError("no model given (use --model or set SMEARSCOPE_MODEL)")
    return load_model(path)


# -- commands --------------------------------------------------------------

def cmd_preprocess(args) -> int:
    img = read_image(args.input)
    out, report = preprocess_field(img, pre_config(args))
    write_png(args.out, out)
    _write_json(Path(args.out).with_suffix(".json"), report.to_dict())
    return EXIT_OK


def cmd_segment(args) -> int:
    img = read_image(args.input)
    dets = localize_cells(img, seg_config(args))
    _write_json(args.out_json, {"image": str(args.input),
                                "detections": [d.to_dict() for d in dets]})
    if args.out_overlay:
        write_png(args.out_overlay, draw_boxes(img, [d.box for d in dets],
                                               [(0, 90, 255)] * len(dets)))
    log.info("%d cells", len(dets))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    ids = [im.image_id for im in manifest.images]
    if args.use_split:
        ids = split_dataset(ids, seed=args.seed).train
    x, y = cell_dataset(manifest, ids)
    hp = train_config(args)
    model = train_ssc(x, y, hp) if args.arch == "ssc" else train_tsc(x, y, hp)
    save_model(model, args.out)
    log.info("trained %s on %d cells", args.arch, len(y))
    return EXIT_OK


def infer_document(data: bytes, model, seg_cfg, pre_cfg, overlay_path=None) -> dict:
    img = decode_image(data)
    result = analyze_image(img, seg_cfg, model, pre_cfg, image_id_for_bytes(data))
    if overlay_path:
        write_png(overlay_path, render_overlay(img, result))
    return result.to_dict()


def cmd_infer(args) -> int:
    model = _load_model(args.model)
    data = Path(args.input).read_bytes()
    doc = infer_document(data, model, seg_config(args), pre_config(args), args.out_overlay)
    _write_json(args.out_json, doc)
    log.info("%d cells, %d infected", doc["total_cells"], doc["infected_cells"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.task == "localization":
        report = evaluate_localization(manifest, seg_config(args))
    else:
        split = split_dataset([im.image_id for im in manifest.images], seed=args.seed)
        report = evaluate_classification(manifest, split, args.arch, args.seed,
                                         hp=train_config(args), box_source=args.box_source,
                                         seg_cfg=seg_config(args))
    report["manifest"] = str(args.manifest)
    report["seed"] = args.seed
    _write_json(args.out, report)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig()
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text()))
    cfg = replace(cfg, seed=args.seed)
    manifest = generate_corpus(cfg, args.n, args.out)
    log.info("wrote %d images, %d cells", len(manifest.images), manifest.num_cells)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    model = _load_model(args.model)
    serve(args.host, args.port, model, seg_config(args), pre_config(args))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smearscope", description="Blood smear cell localization and "
                     "malaria life-stage classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seg, pre, tr = _seg_parent(), _pre_parent(), _train_parent()

    p = sub.add_parser("preprocess", parents=[pre], help="remove the dark vignette")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", parents=[seg], help="localize cells")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-overlay")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", parents=[tr], help="train a classifier from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", choices=["ssc", "tsc"], default="tsc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--use-split", action="store_true",
                   help="train on the seeded 70%% train split only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[seg, pre], help="analyze one image")
    p.add_argument("--model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-overlay")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[seg, tr], help="score against a manifest")
    p.add_argument("task", choices=["localization", "classification"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["ssc", "tsc"], default="tsc")
    p.add_argument("--box-source", choices=["gt", "predicted"], default="gt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic smear corpus")
    p.add_argument("--config")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", parents=[seg, pre], help="run the HTTP inference service")
    p.add_argument("--model")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"smearscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ManifestError, OSError, RuntimeError) as exc:
        print(f"smearscope: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
