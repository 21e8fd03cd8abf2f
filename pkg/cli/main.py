"""Command-line entry point: run, synth, eval, gradcheck and ablate

Results go to stdout, diagnostics to stderr and the log file. Exit codes:
0 success, 1 gradcheck below the required pass rate, 2 invalid input.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from config.run_config import ConfigError, RunConfig, load_run_config
from pipeline.depth_tools import DepthImage, MetricsReport, depth_metrics
from pipeline.errors import PipelineError
from pipeline.gradcheck import DEFAULT_PASS_RATE, DEFAULT_TOLERANCE, run_gradcheck
from pipeline.runner import (
    PipelineRunner,
    SceneInputs,
    dump_scene,
    load_scene_dir,
    metrics_table,
    write_outputs,
)
from pipeline.scene_synth import SceneConfig, generate_scene
from utils import file_formats
from utils.file_formats import FileFormatError
from utils.logger import get_logger, setup_logging

_LOGGER = get_logger(__name__)

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_INPUT_ERROR = 2

# --knob name → (RunConfig field, value parser)
ABLATION_KNOBS: Dict[str, Tuple[str, Callable[[str], object]]] = {
    "points": ("n_points", int),
    "ratio": ("ratio", float),
    "nms": ("nms_radius", int),
    "threshold": ("threshold", float),
    "samples": ("epipolar_samples", int),
    "offset": ("offset_px", int),
    "views": ("n_views", int),
}


def _add_logging_args(parser: argparse.ArgumentParser):
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default: DELTAS_LOG_LEVEL or INFO)")
    parser.add_argument("--log-dir", type=Path, default=None, help="directory for run.log (default: ~/.mvs-triangulate)")


def _add_synth_args(parser: argparse.ArgumentParser):
    parser.add_argument("--views", type=int, default=None, help="number of views including the anchor")
    parser.add_argument("--seed", type=int, default=None, help="root seed for every random stream")
    parser.add_argument("--scene-points", type=int, default=512, help="points planted in a synthetic scene")
    parser.add_argument("--pixel-noise", type=float, default=0.0, help="std-dev of planted match noise in pixels")
    parser.add_argument("--stride", type=int, default=None, help="descriptor grid stride in pixels")
    parser.add_argument("--peak-sharpness", type=float, default=1.5,
                        help="std-dev of planted descriptor splats in pixels, at least the stride")


def _add_run_args(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scene", type=Path, help="scene directory (cameras.json, view_K.desc, view_0.smap, ...)")
    source.add_argument("--synth", action="store_true", help="generate a synthetic scene from --seed")
    _add_synth_args(parser)
    parser.add_argument("--points", type=int, default=None, help="anchor interest points (default 512)")
    parser.add_argument("--ratio", type=float, default=None, help="share of detected points (default 0.5)")
    parser.add_argument("--nms", type=int, default=None, help="NMS radius in pixels (default 9)")
    parser.add_argument("--threshold", type=float, default=None, help="detector score threshold (default 0.0005)")
    parser.add_argument("--samples", type=int, default=None, help="epipolar samples per line (default 100)")
    parser.add_argument("--offset", type=int, default=None, help="perpendicular offset rows in pixels (default 1)")
    parser.add_argument("--depth-min", type=float, default=None, help="nearest depth hypothesis in meters (default 0.5)")
    parser.add_argument("--depth-max", type=float, default=None, help="farthest depth hypothesis in meters (default 10)")
    parser.add_argument("--scale", type=float, default=None, help="softmax temperature on correlations (default 20)")
    parser.add_argument("--densify", action="store_true", default=None, help="also write an IDW-densified depth map")
    parser.add_argument("--gt-depth", action="store_true", default=None,
                        help="replace triangulated depths by ground truth at the imputed pixels")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: DELTAS_THREADS or CPU count)")
    _add_logging_args(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvs-tri",
                                     description="Multi-view interest point triangulation and sparse depth")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the pipeline on a scene directory or a synthetic scene")
    _add_run_args(run)
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.set_defaults(handler=cmd_run)

    synth = commands.add_parser("synth", help="write a synthetic scene directory")
    _add_synth_args(synth)
    synth.add_argument("--out", type=Path, required=True, help="scene directory to create")
    _add_logging_args(synth)
    synth.set_defaults(handler=cmd_synth)

    evaluate = commands.add_parser("eval", help="depth metrics of a predicted PFM against a ground-truth PFM")
    evaluate.add_argument("pred", type=Path)
    evaluate.add_argument("gt", type=Path)
    evaluate.add_argument("--out", type=Path, default=None, help="also write the metrics CSV here")
    _add_logging_args(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--instances", type=int, default=1000)
    gradcheck.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    gradcheck.add_argument("--scale", type=float, default=1.0, help="softmax temperature of the checked maps")
    _add_logging_args(gradcheck)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    ablate = commands.add_parser("ablate", help="sweep one knob on the same scene, one metrics row per value")
    _add_run_args(ablate)
    ablate.add_argument("--knob", required=True, choices=sorted(ABLATION_KNOBS))
    ablate.add_argument("--values", required=True, help="comma-separated values, e.g. 25,50,100,150")
    ablate.add_argument("--out", type=Path, default=None, help="also write the sweep CSV here")
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(
        n_points=args.points, ratio=args.ratio, nms_radius=args.nms, threshold=args.threshold,
        epipolar_samples=args.samples, offset_px=args.offset, depth_min=args.depth_min, depth_max=args.depth_max,
        n_views=args.views, seed=args.seed, densify=args.densify, descriptor_stride=args.stride,
        correlation_scale=args.scale, use_gt_depth=args.gt_depth, threads=args.threads,
        log_level=args.log_level.upper() if args.log_level else None,
    )


def _scene_config(args: argparse.Namespace, config: RunConfig) -> SceneConfig:
    return SceneConfig(n_points=args.scene_points, n_views=config.n_views, seed=config.seed,
                       image_size=config.image_size, descriptor_stride=config.descriptor_stride or 1,
                       pixel_noise=args.pixel_noise, peak_sharpness=args.peak_sharpness)


def _load_inputs(args: argparse.Namespace, config: RunConfig) -> SceneInputs:
    if args.scene is not None:
        inputs = load_scene_dir(args.scene, stride=config.descriptor_stride)
        return inputs.first_views(args.views) if args.views is not None else inputs
    return SceneInputs.from_scene(generate_scene(_scene_config(args, config)))


def _print_table(header: Sequence[str], rows: Sequence[Sequence[str]]):
    sys.stdout.write(file_formats.format_csv(header, rows))


def cmd_run(args: argparse.Namespace) -> int:
    config = _run_config(args)
    inputs = _load_inputs(args, config)
    result = PipelineRunner(config).run(inputs)
    write_outputs(result, args.out, inputs.n_views)
    if result.metrics:
        _print_table(*metrics_table(result.metrics))
    else:
        print(f"triangulated {result.n_valid}/{len(result.triangulated)} points (no ground truth)")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_run_config(n_views=args.views, seed=args.seed, descriptor_stride=args.stride)
    scene = generate_scene(_scene_config(args, config))
    dump_scene(scene, args.out)
    print(args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    pred = DepthImage.from_values(file_formats.read_pfm(args.pred).astype(float))
    gt = DepthImage.from_values(file_formats.read_pfm(args.gt).astype(float))
    header, rows = metrics_table([("eval", depth_metrics(pred, gt))])
    if args.out is not None:
        file_formats.write_csv(args.out, header, rows)
    _print_table(header, rows)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.instances < 0:
        raise ConfigError(f"--instances must be >= 0, got {args.instances}")
    report = run_gradcheck(seed=args.seed, n_instances=args.instances, tolerance=args.tolerance, scale=args.scale)
    for line in report.lines():
        print(line)
    if not report.passed(DEFAULT_PASS_RATE):
        _LOGGER.error(f"gradcheck pass rate {report.pass_rate:.4f} below {DEFAULT_PASS_RATE}")
        return EXIT_GRADCHECK_FAILED
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    field_name, parse = ABLATION_KNOBS[args.knob]
    try:
        values = [parse(v.strip()) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values for {args.knob}: {e}") from e
    if not values:
        raise ConfigError("--values is empty")

    base = _run_config(args)
    shared = None if args.knob == "views" else _load_inputs(args, base)
    header = ["knob", "value", "stage"] + MetricsReport.header()
    rows: List[List[str]] = []
    for value in values:
        config = base.with_overrides(**{field_name: value})
        if shared is not None:
            inputs = shared
        elif args.scene is not None:
            inputs = load_scene_dir(args.scene, stride=config.descriptor_stride).first_views(config.n_views)
        else:
            inputs = SceneInputs.from_scene(generate_scene(_scene_config(args, config)))
        result = PipelineRunner(config).run(inputs)
        report = result.metrics_for("sparse")
        if report is None:
            _LOGGER.warning(f"{args.knob}={value}: no metrics (scene has no ground truth or no valid pixels)")
            continue
        rows.append([args.knob, repr(value), "sparse"] + report.row())
        _LOGGER.info(f"{args.knob}={value}: abs_rel {report.abs_rel:.5f}")
    if args.out is not None:
        file_formats.write_csv(args.out, header, rows)
    _print_table(header, rows)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the command line"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging((args.log_level or RunConfig.from_env().log_level).upper(), args.log_dir)
    except (ValueError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        return args.handler(args)
    except (ConfigError, FileFormatError, PipelineError) as e:
        _LOGGER.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
