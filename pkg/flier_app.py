# flier_app.py
"""
FLIER - Command-Line Entry Point

Subcommands: gen-data, build-cache, train, eval, ablate, report.
Exit codes: 0 on success, 1 on an expected failure (one-line cause on
stderr), 2 on an unexpected error.

Version: 1.0.0
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog

from src.handlers.commands import (
    CommandOutcome,
    cmd_ablate,
    cmd_build_cache,
    cmd_eval,
    cmd_gen_data,
    cmd_report,
    cmd_train,
)
from src.models.config import AblationAxis, RunConfig, TrainMode
from src.utils.config import __version__, get_settings, load_run_config
from src.utils.errors import FlierError
from src.utils.logging import setup_logging

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_UNEXPECTED = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--output-root", type=Path, help="artifact root (env FLIER_OUTPUT_ROOT)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR or CRITICAL")
    forceable = argparse.ArgumentParser(add_help=False)
    forceable.add_argument("--force", action="store_true", help="rebuild existing artifacts")

    parser = argparse.ArgumentParser(
        prog="flier",
        description="Few-shot joint training with generated images and their diffusion latents",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common, forceable], help="create the synthetic dataset")

    build = sub.add_parser(
        "build-cache", parents=[common, forceable], help="train diffusion, fill the cache"
    )
    build.add_argument("--count", type=int, help="generated records per class")

    train = sub.add_parser("train", parents=[common, forceable], help="train on one episode")
    train.add_argument("--shots", type=int, help="K, training images per class")
    train.add_argument("--alpha", type=float, help="latent factor")
    train.add_argument(
        "--mode",
        choices=[m.value for m in TrainMode],
        default=TrainMode.FLIER.value,
        help="training protocol",
    )

    sub.add_parser("eval", parents=[common], help="evaluate the trained checkpoint")

    ablate = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    ablate.add_argument("--axis", choices=[a.value for a in AblationAxis], required=True)
    ablate.add_argument("--shots", type=int, help="restrict the grid to one shot count")
    ablate.add_argument("--alpha", type=float, help="latent factor of non-alpha sweeps")
    ablate.add_argument("--jobs", type=int, help="parallel cells")

    report = sub.add_parser("report", parents=[common], help="render saved reports")
    report.add_argument("--report-dir", type=Path, help="directory holding the reports")
    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config overrides from command-line flags."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        overrides.setdefault("diffusion", {})["count_per_class"] = args.count
    if getattr(args, "alpha", None) is not None:
        overrides.setdefault("train", {})["alpha"] = args.alpha
    if getattr(args, "jobs", None) is not None:
        overrides.setdefault("ablation", {})["jobs"] = args.jobs
    shots = getattr(args, "shots", None)
    if shots is not None:
        overrides["shots"] = shots
        if args.command == "ablate":
            overrides.setdefault("ablation", {})["shots"] = [shots]
    return overrides


def dispatch(args: argparse.Namespace, config: RunConfig, output_root: Path) -> CommandOutcome:
    if args.command == "gen-data":
        return cmd_gen_data(config, output_root, args.force)
    if args.command == "build-cache":
        return cmd_build_cache(config, output_root, args.force)
    if args.command == "train":
        return cmd_train(config, output_root, args.force, TrainMode(args.mode))
    if args.command == "eval":
        return cmd_eval(config, output_root)
    if args.command == "ablate":
        return cmd_ablate(config, output_root, AblationAxis(args.axis))
    return cmd_report(config, output_root, args.report_dir)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
        setup_logging(args.log_level or settings.LOG_LEVEL, settings.LOG_FORMAT)
        config = load_run_config(args.config, config_overrides(args))
        output_root = args.output_root or Path(settings.OUTPUT_ROOT)
        outcome = dispatch(args, config, output_root)
    except FlierError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception("command_failed_unexpectedly", command=args.command)
        print(f"error: unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED

    print(outcome.message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
