"""Command line interface: `volumae <command> [options]`"""
import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from volumae.checks import CheckReport, run_checks
from volumae.config import RunConfig, load_run_config, validate_run_config
from volumae.constants import MANUAL_RUN_ID
from volumae.exceptions import CheckpointMismatchError, ConfigurationError, VolumaeError
from volumae.logger import get_logger, release_loggers
from volumae.model import StepSeeds
from volumae.orchestrator.data_storage import (
    default_run_directory,
    list_scene_files,
    scene_filename,
    store_json,
)
from volumae.scenegen import generate_scene, load_scene, save_scene
from volumae.training import (
    ablate,
    dump_reconstruction,
    load_checkpoint,
    pretrain_run,
    restore_model,
    summarize_metrics,
)
from volumae._version import __version__


EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def _base_config(args: argparse.Namespace, default: RunConfig) -> RunConfig:
    base = RunConfig.paper_preset() if getattr(args, "paper_preset", False) else default
    if args.config is None:
        return base
    return load_run_config(args.config, base)


def _scene_files(directory: Path) -> List[Path]:
    files = list_scene_files(directory)
    if not files:
        raise ConfigurationError(f"No scene file in {directory}")
    return files


def _out_directory(args: argparse.Namespace) -> Path:
    """`--out`, or a new directory under the data dir named after the command and the time"""

    if args.out is not None:
        return Path(args.out)
    stamp = datetime.now(tz=timezone.utc).strftime("%Y%m%dT%H%M%S")
    return default_run_directory(f"{args.command}-{stamp}")


def gen_scenes(args: argparse.Namespace) -> int:
    config = _base_config(args, RunConfig.desk())
    logger = get_logger()
    for seed in range(args.seed, args.seed + args.count):
        scene = generate_scene(config.scenes.scene_spec(seed, config.volume))
        path = save_scene(scene, scene_filename(args.out, seed))
        logger.info("Scene %d written to %s (%d points)", seed, path, len(scene.points))
    return EXIT_OK


def pretrain(args: argparse.Namespace) -> int:
    config = _base_config(args, RunConfig.desk())
    if args.steps is not None:
        config = validate_run_config({"total_steps": args.steps}, base=config)
    if args.resume and args.out is None:
        raise ConfigurationError("--resume needs the --out directory of the run to resume")
    summary = pretrain_run(
        config, _scene_files(args.scenes), _out_directory(args), resume=args.resume
    )
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


def _print_checks(report: CheckReport) -> None:
    width = max(len(result.name) for result in report.results)
    print(f"{'check':<{width}}  {'measured':>12}  {'tolerance':>12}  status")
    for result in report.results:
        status = "ok" if result.passed else "FAILED"
        print(
            f"{result.name:<{width}}  {result.measured:>12.3e}  "
            f"{result.tolerance:>12.3e}  {status}"
        )
        if not result.passed and result.detail:
            print(f"    {result.detail}")
    print(f"{len(report.results) - len(report.failures)}/{len(report.results)} checks passed")


def check(args: argparse.Namespace) -> int:
    config = _base_config(args, RunConfig.tiny())
    overfit_config = None
    if args.overfit:
        overfit_config = RunConfig.desk().model_copy(update={"seed": config.seed})
    report = run_checks(config, args.report_out, overfit_config)
    _print_checks(report)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def reconstruct(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    scene = load_scene(Path(args.scene))

    scenes = checkpoint.config.scenes
    if scene.n_views != scenes.n_views:
        raise CheckpointMismatchError("scenes.n_views", scenes.n_views, scene.n_views)
    if tuple(scene.image_size) != tuple(scenes.image_size):
        raise CheckpointMismatchError(
            "scenes.image_size", tuple(scenes.image_size), tuple(scene.image_size)
        )

    model = restore_model(checkpoint)
    seeds = StepSeeds.derive(checkpoint.config.seed, checkpoint.step)
    artifacts = dump_reconstruction(model, scene, Path(args.out), seeds)
    get_logger().info("Reconstruction written to %s", artifacts.directory)
    return EXIT_OK


def report(args: argparse.Namespace) -> int:
    summary = summarize_metrics(args.metrics)
    out = Path(args.out)
    store_json(out.parent, out.name, summary.model_dump(mode="json"))
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


def run_ablation(args: argparse.Namespace) -> int:
    config = _base_config(args, RunConfig.desk())
    results = ablate(
        config,
        _scene_files(args.scenes),
        _out_directory(args),
        args.steps,
        with_mask_ratios=args.mask_ratios,
    )
    for result in results:
        print(f"{result.id:<28} {result.status.value:<10} finite={result.finite}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volumae", description="Multi-modal masked autoencoder pre-training"
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config(command: argparse.ArgumentParser, paper_preset: bool = True) -> None:
        command.add_argument("--config", type=Path, help="run config file, JSON or YAML")
        if paper_preset:
            command.add_argument(
                "--paper-preset",
                action="store_true",
                help="start from the full-scale configuration instead of the desk one",
            )

    command = commands.add_parser("gen-scenes", help="generate synthetic scene files")
    command.add_argument("--seed", type=int, required=True)
    command.add_argument("--count", type=int, required=True)
    command.add_argument("--out", type=Path, required=True)
    add_config(command)
    command.set_defaults(handler=gen_scenes)

    command = commands.add_parser("pretrain", help="pre-train a model on scene files")
    add_config(command)
    command.add_argument("--scenes", type=Path, required=True)
    command.add_argument("--out", type=Path, help="run directory, a new one by default")
    command.add_argument("--resume", action="store_true", help="continue from --out")
    command.add_argument("--steps", type=int, help="override total_steps")
    command.set_defaults(handler=pretrain)

    command = commands.add_parser("check", help="run the gradient and invariant checks")
    add_config(command, paper_preset=False)
    command.add_argument("--report-out", type=Path, help="also write the report as JSON")
    command.add_argument(
        "--overfit",
        action="store_true",
        help="also pre-train the desk preset on one scene and check that it overfits",
    )
    command.set_defaults(handler=check)

    command = commands.add_parser("reconstruct", help="dump a reconstruction of a scene")
    command.add_argument("--ckpt", type=Path, required=True)
    command.add_argument("--scene", type=Path, required=True)
    command.add_argument("--out", type=Path, required=True)
    command.set_defaults(handler=reconstruct)

    command = commands.add_parser("report", help="summarize a metrics file")
    command.add_argument("--metrics", type=Path, required=True)
    command.add_argument("--out", type=Path, required=True)
    command.set_defaults(handler=report)

    command = commands.add_parser("ablate", help="run the ablation arms")
    add_config(command)
    command.add_argument("--scenes", type=Path, required=True)
    command.add_argument("--out", type=Path, help="output directory, a new one by default")
    command.add_argument("--steps", type=int, required=True)
    command.add_argument("--mask-ratios", action="store_true", help="add the mask-ratio arms")
    command.set_defaults(handler=run_ablation)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except VolumaeError as error:
        get_logger().error("%s: %s", type(error).__name__, error)
        return EXIT_ERROR
    finally:
        release_loggers(MANUAL_RUN_ID)


if __name__ == "__main__":
    sys.exit(main())
