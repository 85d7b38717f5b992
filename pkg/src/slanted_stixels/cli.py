"""``stixel`` command line tool.

Exit codes: 0 success, 1 bad arguments or configuration, 2 I/O or format
errors, 3 invariant violations during inference.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import _backend
from .cuts import DEFAULT_JUMP_THRESHOLD, DEFAULT_WINDOW, cut_density, generate_cuts
from .evaluate import (complexity_stats, disparity_outlier_rate, mean_iou, outlier_mask,
                       scene_from_dict, synthesize)
from .infer import infer_image
from .io import (IGNORE_LABEL, FormatError, downsample, load_pfm, load_semantic_tensor, load_stixels,
                 read_pgm, render, save_ppm_visualization, save_stixels, write_pfm, write_pgm,
                 write_semantic_tensor)
from .model import (ConfigError, GeometricClass, ModelConfig, default_taxonomy,
                    ground_prior_from_calibration, load_calibration, load_config, load_taxonomy,
                    validate_config)

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("STIXEL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"STIXEL_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("STIXEL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _positive_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model(args, taxonomy, image_height):
    config = load_config(args.config) if args.config else ModelConfig()
    if args.calibration:
        calib = load_calibration(args.calibration)
        prior = config.plane_priors[GeometricClass.GROUND]
        g = ground_prior_from_calibration(calib, args.vstep, prior.sigma_a, prior.sigma_b,
                                          image_height=image_height)
        config = config.with_prior(GeometricClass.GROUND, g)
    return validate_config(config, taxonomy)


def _load_inputs(args, taxonomy):
    disp = load_pfm(args.disparity)
    sem = load_semantic_tensor(args.semantics, softmax=args.softmax)
    conf = load_pfm(args.confidence, kind="confidence") if args.confidence else None
    if sem.channels != taxonomy.size:
        raise UsageError(f"semantic tensor has {sem.channels} channels, taxonomy has {taxonomy.size}")
    if (sem.width, sem.height) != (disp.width, disp.height):
        raise FormatError("disparity and semantic inputs differ in size")
    if conf is not None and (conf.width, conf.height) != (disp.width, disp.height):
        raise FormatError("confidence image differs in size")
    return disp, sem, conf


def cmd_infer(args) -> int:
    stages = {}
    t0 = time.perf_counter()
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else default_taxonomy()
    disp, sem, conf = _load_inputs(args, taxonomy)
    # calibration priors are expressed over bottom-up rows of the input
    config = _model(args, taxonomy, disp.height)
    t1 = time.perf_counter()
    stages["load"] = 1e3 * (t1 - t0)
    try:
        columns = downsample(disp, sem, args.width, args.vstep, conf)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t2 = time.perf_counter()
    stages["downsample"] = 1e3 * (t2 - t1)
    cut_params = {"jump_threshold": args.jump_threshold, "window": args.window}
    try:
        world = infer_image(columns, config, taxonomy,
                            cut_mode="pruned" if args.mode == "fast" else "full",
                            cut_params=cut_params, width_px=args.width, vstep=args.vstep,
                            image_dims=(disp.width, disp.height), threads=_threads(args.threads),
                            backend=args.backend)
    except RuntimeError as exc:
        raise InvariantError(str(exc)) from None
    problems = world.problems()
    if problems:
        raise InvariantError("; ".join(problems))
    t3 = time.perf_counter()
    stages["infer"] = 1e3 * (t3 - t2)
    save_stixels(world, args.out)
    if args.viz:
        save_ppm_visualization(world, args.viz_mode, args.viz, d_range=config.d_max)
    stages["write"] = 1e3 * (time.perf_counter() - t3)
    if args.stats:
        stats = complexity_stats(world, stages)
        stats.update({
            "backend": _backend.name_of(_backend.get(args.backend)),
            "mode": args.mode,
            "total_energy": world.total_energy,
            "columns": len(world.columns),
            "column_height": world.column_height,
        })
        _write_json(args.stats, stats)
    return EXIT_OK


def cmd_eval(args) -> int:
    world = load_stixels(args.world)
    gt_d = load_pfm(args.gt_disparity)
    gt_l = read_pgm(args.gt_labels)
    W, H = world.image_dims
    for name, img in (("gt disparity", gt_d), ("gt labels", gt_l)):
        if (img.width, img.height) != (W, H):
            raise FormatError(f"{name} is {img.width}x{img.height}, world is {W}x{H}")
    disp, labels = render(world)
    rate = disparity_outlier_rate(disp, gt_d, rule=args.outlier_rule)
    _, evaluated = outlier_mask(disp.plane, gt_d.plane, args.outlier_rule)
    iou = mean_iou(labels, gt_l, world.taxonomy, ignore_label=args.ignore_label)
    report = {
        "outlier_rate": None if np.isnan(rate) else rate,
        "outlier_rule": args.outlier_rule,
        "evaluated_pixels": int(evaluated.sum()),
        "mean_iou": None if np.isnan(iou.mean) else iou.mean,
        "per_class_iou": iou.per_class,
        "stixel_count": world.num_stixels,
    }
    if args.report:
        _write_json(args.report, report)
    print(f"{'outlier rate':<14}{'-' if report['outlier_rate'] is None else f'{rate:8.2f} %'}")
    print(f"{'mean IoU':<14}{'-' if report['mean_iou'] is None else f'{iou.mean:8.2f} %'}")
    for name, v in iou.per_class.items():
        print(f"  {name:<12}{v:8.2f} %")
    return EXIT_OK


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.spec}: {exc}") from None
    try:
        spec = scene_from_dict(doc)
        scene = synthesize(spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scene spec: {exc}") from None
    os.makedirs(args.out_dir, exist_ok=True)
    out = args.out_dir
    write_pfm(os.path.join(out, "disparity.pfm"), scene.disparity)
    write_semantic_tensor(os.path.join(out, "semantics.semf"), scene.semantics)
    write_pfm(os.path.join(out, "gt_disparity.pfm"), scene.gt_disparity)
    write_pgm(os.path.join(out, "gt_labels.pgm"), scene.gt_labels)
    _write_json(os.path.join(out, "gt_boundaries.json"), scene.gt_boundaries)
    return EXIT_OK


def cmd_cuts_dump(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else default_taxonomy()
    disp, sem, conf = _load_inputs(args, taxonomy)
    config = _model(args, taxonomy, disp.height)
    try:
        columns = downsample(disp, sem, args.width, args.vstep, conf)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = []
    for x, col in enumerate(columns):
        cs = generate_cuts(col.masked_for(config), taxonomy, args.jump_threshold, args.window)
        out.append({"column": x, "rows": cs.rows.tolist(), "density": cut_density(cs)})
    doc = {"h": columns[0].h if columns else 0, "columns": out,
           "mean_density": float(np.mean([c["density"] for c in out])) if out else 1.0}
    if args.out:
        _write_json(args.out, doc)
    else:
        json.dump(doc, sys.stdout)
        sys.stdout.write("\n")
    return EXIT_OK


def _add_model_args(p):
    p.add_argument("--disparity", required=True, help="disparity PFM")
    p.add_argument("--semantics", required=True, help="semantic score tensor (SEMF)")
    p.add_argument("--confidence", help="per-pixel confidence PFM (default 1)")
    p.add_argument("--config", help="model configuration JSON")
    p.add_argument("--taxonomy", help="class taxonomy JSON (default: built-in six classes)")
    p.add_argument("--calibration", help="stereo calibration JSON; sets the ground prior means")
    p.add_argument("--width", type=_positive_int, default=8, help="stixel width in pixels")
    p.add_argument("--vstep", type=_positive_int, default=8, help="row downsampling factor")
    p.add_argument("--softmax", action="store_true", help="semantic tensor holds logits")
    p.add_argument("--jump-threshold", type=float, default=DEFAULT_JUMP_THRESHOLD,
                   help="disparity jump (px) that forces a cut in fast mode")
    p.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW,
                   help="neighbourhood for disparity extrema in fast mode")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stixel", description="Slanted stixel inference and evaluation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("infer", help="compute a stixel world")
    _add_model_args(p)
    p.add_argument("--mode", choices=("exact", "fast"), default="exact")
    p.add_argument("--out", required=True, help="output stixel JSON")
    p.add_argument("--viz", help="optional PPM visualisation")
    p.add_argument("--viz-mode", choices=("semantic", "depth"), default="semantic")
    p.add_argument("--stats", help="write timing and complexity statistics JSON")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: $STIXEL_THREADS or CPU count)")
    p.add_argument("--backend", choices=("cython", "python"), default=None,
                   help="kernel implementation (default: compiled when available)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a stixel world against ground truth")
    p.add_argument("--world", required=True)
    p.add_argument("--gt-disparity", required=True)
    p.add_argument("--gt-labels", required=True, help="label id PGM")
    p.add_argument("--report", help="write the report JSON here")
    p.add_argument("--outlier-rule", choices=("and", "or"), default="and")
    p.add_argument("--ignore-label", type=int, default=IGNORE_LABEL)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--spec", required=True, help="scene JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cuts-dump", help="print the generated cut rows per column")
    _add_model_args(p)
    p.add_argument("--out", help="output JSON (default: standard output)")
    p.set_defaults(func=cmd_cuts_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"stixel: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, FormatError) as exc:
        print(f"stixel: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"stixel: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
