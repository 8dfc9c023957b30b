import argparse
import os
import sys
import traceback
from typing import Any, Dict, List, Optional

if __name__ == "__main__" and not __package__:
    parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    if parent_dir not in sys.path:
        sys.path.insert(0, parent_dir)
    import simloop
    __package__ = "simloop"

from .guidance_lib import core
from .guidance_lib.config_loader import build_config
from .guidance_lib.exceptions import SimloopError
from .guidance_lib.options import PIPELINE_STAGES, PipelineConfig
from .guidance_lib.validation import validate_config
from . import color_console as cc

__version__ = "1.0.0"

STAGE_COMMANDS = PIPELINE_STAGES + [core.EVAL_STAGE]


def _validate_args(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Performs validation checks on parsed command-line arguments."""
    if args.command == "inspect":
        return
    if args.config and not os.path.isfile(args.config):
        parser.error(f"Config file not found: {args.config}")
    if not args.bundle:
        parser.error("--bundle is required")
    if not args.out:
        parser.error("--out is required")
    if args.stage and args.command != "pipeline":
        parser.error("--stage is only valid with the 'pipeline' subcommand")
    if args.command == core.EVAL_STAGE:
        for flag, path in (("--video", args.video), ("--masks", args.masks)):
            if path and not os.path.isdir(path):
                parser.error(f"{flag} directory not found: {path}")


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    """Assembles the PipelineConfig from the preset file and command-line flags."""
    overrides: Dict[str, Any] = {
        "bundle_path": args.bundle,
        "output_path": args.out,
        "seed": args.seed,
        "threads": args.threads,
        "verbose": args.verbose or None,
        "quiet": args.quiet or None,
        "debug": args.debug or None,
    }
    config = build_config(preset=args.preset, user_config_path=args.config, overrides=overrides)
    return validate_config(config)


def _report_stage(result: core.StageResult, config: PipelineConfig):
    entry = result.entry
    cc.print_success(f"done in {entry['wall_time_s']:.2f}s, {len(entry['outputs'])} file(s) written",
                     quiet=config.quiet, stage=result.stage)
    for message in result.warnings:
        cc.print_warning(f"warning: {message}", quiet=config.quiet, stage=result.stage)
    if config.verbose:
        for key, value in sorted(result.summary.items()):
            cc.print_info(f"    {key}: {value}", quiet=config.quiet)


def _run_inspect(args: argparse.Namespace):
    summary = core.inspect_artifact(args.path)
    cc.print_table(summary.headers, summary.rows, title=summary.title)


def main_logic(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Orchestrates the main application workflow after argument parsing."""
    _validate_args(args, parser)
    if args.command == "inspect":
        _run_inspect(args)
        return

    config = _build_config(args)
    if args.command == "pipeline":
        if args.stage:
            config.stages = [args.stage]
        cc.print_info(f"Running {len(config.stages)} stage(s) on '{config.bundle_path}'...", quiet=config.quiet)
        manifest = core.run_pipeline(config, on_stage=lambda r: _report_stage(r, config))
        cc.print_success(f"Pipeline complete: {len(manifest['stages'])} stage(s) in manifest.", quiet=config.quiet)
        return

    cc.print_info(f"Running stage '{args.command}'...", quiet=config.quiet)
    if args.command == core.EVAL_STAGE:
        result = core.run_stage(args.command, config, video_dir=args.video, masks_dir=args.masks)
        _report_stage(result, config)
        cc.print_info(f"L_TTCO = {result.summary['l_ttco']:.6g}", quiet=config.quiet)
    else:
        _report_stage(core.run_stage(args.command, config), config)


def _add_run_arguments(sub: argparse.ArgumentParser):
    core_group = sub.add_argument_group('Core Arguments')
    core_group.add_argument("--bundle", help="Path to the scene bundle directory.")
    core_group.add_argument("--out", help="Output directory for stage artifacts.")

    config_group = sub.add_argument_group('Configuration')
    config_group.add_argument("--config", default=None, help="Path to a JSON preset file merged over the built-in presets.")
    config_group.add_argument("--preset", default="_default", help="Preset to use (default: %(default)s).")
    config_group.add_argument("--seed", type=int, default=None, help="Particle jitter seed.")
    config_group.add_argument("--threads", type=int, default=None, help="Worker threads for per-frame work (env: SIMLOOP_THREADS).")

    info_group = sub.add_argument_group('General')
    verbosity_group = info_group.add_mutually_exclusive_group()
    verbosity_group.add_argument("--verbose", action="store_true", help="Print per-stage details.")
    verbosity_group.add_argument("--quiet", "-q", action="store_true", help="Suppress all informational output.")
    info_group.add_argument("--debug", action="store_true", help="Print tracebacks for unexpected failures.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simloop",
        description="Physics-simulation guidance for generated videos: estimate, simulate, render, fuse flow and build texture targets.",
        formatter_class=argparse.RawTextHelpFormatter,
        epilog="Example usage:\n"
               "  # Run every stage on a bundle\n"
               "  simloop pipeline --bundle ./scene --out ./run\n\n"
               "  # Rerun only the simulation with a preset from a user file\n"
               "  simloop pipeline --stage simulate --config my_presets.json --preset preview --bundle ./scene --out ./run\n\n"
               "  # Score a generated video against the targets\n"
               "  simloop eval-loss --bundle ./scene --out ./run --video ./generated_frames"
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in PIPELINE_STAGES:
        _add_run_arguments(subparsers.add_parser(name, help=f"Run the '{name}' stage."))

    eval_parser = subparsers.add_parser(core.EVAL_STAGE, help="Score a candidate video against the warp targets.")
    _add_run_arguments(eval_parser)
    eval_group = eval_parser.add_argument_group('Evaluation')
    eval_group.add_argument("--video", default=None, help="Directory of candidate frames %%04d.png (default: bundle frames).")
    eval_group.add_argument("--masks", default=None, help="Directory of candidate masks %%04d.png for mask mIoU.")

    pipeline_parser = subparsers.add_parser("pipeline", help="Run the configured stages in order.")
    _add_run_arguments(pipeline_parser)
    pipeline_parser.add_argument("--stage", choices=PIPELINE_STAGES, default=None, help="Run only this stage.")

    inspect_parser = subparsers.add_parser("inspect", help="Summarise an artifact file.")
    inspect_parser.add_argument("path", help="Artifact to summarise.")

    for sub in subparsers.choices.values():
        sub.set_defaults(stage=None, video=None, masks=None, debug=False)
    return parser


def main(argv: Optional[List[str]] = None) -> None:
    """Defines and executes the command-line interface."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        main_logic(args, parser)
    except SimloopError as e:
        where = f"[{e.stage}] " if e.stage else ""
        cc.print_error(f"\n---FATAL ERROR---\n{where}{e}\n-------------------\n")
        sys.exit(e.exit_code)
    except Exception as e:
        if getattr(args, "debug", False):
            traceback.print_exc()
        cc.print_error(f"\n---UNEXPECTED FATAL ERROR---\n{e}\n-------------------\n")
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
