"""Command-line entry point.

Subcommands: gen, train <stage>, render, interp, eval. Exit codes:
0 success, 1 usage/config error, 2 eval threshold violation.
"""

import argparse
import sys
from pathlib import Path

from .config import DEFAULTS_YAML, PipelineConfig, load_config
from .pipeline import (StageError, ThresholdViolation, run_eval, run_gen,
                       run_interp, run_render, run_train_audio,
                       run_train_expr, run_train_landmark, run_train_nerf)

TRAIN_STAGES = ("landmark", "audio", "expr", "nerf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthtalk",
        description="Synthetic talking-head pipeline: corpus generation, staged "
                    "training, rendering, and evaluation.")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default config YAML and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="pipeline config YAML")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the config output directory")

    p_gen = sub.add_parser("gen", help="generate the synthetic corpus")
    common(p_gen)
    p_gen.add_argument("--force", action="store_true",
                       help="overwrite an existing non-empty corpus directory")

    p_train = sub.add_parser("train", help="train one pipeline stage")
    common(p_train)
    p_train.add_argument("stage", choices=TRAIN_STAGES)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the stage's existing checkpoint")

    p_render = sub.add_parser("render", help="render frames from source videos")
    common(p_render)
    p_render.add_argument("--audio-source", required=True, help="video id driving speech")
    p_render.add_argument("--expr-source", required=True, help="video id driving expression")
    p_render.add_argument("--pose-source", required=True, help="video id driving the camera")
    p_render.add_argument("--frames-out", required=True)
    p_render.add_argument("--truth-out", help="also write analytic oracle frames here")
    p_render.add_argument("--max-frames", type=int)

    p_interp = sub.add_parser("interp", help="expression interpolation sweep")
    common(p_interp)
    p_interp.add_argument("--emotion-a", required=True)
    p_interp.add_argument("--emotion-b", required=True)
    p_interp.add_argument("--steps", type=int, default=5)
    p_interp.add_argument("--frames-out", required=True)

    p_eval = sub.add_parser("eval", help="compare rendered frames against truth")
    common(p_eval)
    p_eval.add_argument("--rendered", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--report", required=True)
    return parser


def _load(args) -> tuple[PipelineConfig, Path]:
    cfg = load_config(args.config) if args.config else PipelineConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg, Path(cfg.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(DEFAULTS_YAML)
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg, out = _load(args)
        if args.command == "gen":
            dest = run_gen(cfg, out, force=args.force)
            print(f"corpus written to {dest}")
        elif args.command == "train":
            runner = {"landmark": run_train_landmark, "audio": run_train_audio,
                      "expr": run_train_expr, "nerf": run_train_nerf}[args.stage]
            path = runner(cfg, out, resume=args.resume)
            print(f"checkpoint written: {path}")
        elif args.command == "render":
            n = run_render(cfg, out, args.audio_source, args.expr_source,
                           args.pose_source, args.frames_out,
                           truth_out=args.truth_out, max_frames=args.max_frames)
            print(f"rendered {n} frames to {args.frames_out}")
        elif args.command == "interp":
            n = run_interp(cfg, out, args.emotion_a, args.emotion_b, args.steps,
                           args.frames_out)
            print(f"rendered {n} interpolation frames to {args.frames_out}")
        elif args.command == "eval":
            report = run_eval(cfg, args.rendered, args.truth, args.report)
            for name in sorted(report.metrics):
                value, unit = report.metrics[name]
                print(f"{name}\t{value:.6f}\t{unit}")
    except ThresholdViolation as err:
        print(f"threshold violation: {err}", file=sys.stderr)
        return 2
    except (StageError, FileNotFoundError, FileExistsError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
