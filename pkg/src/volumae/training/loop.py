import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from volumae.config import RunConfig
from volumae.constants import CHECKPOINT_META_FILE, RECONSTRUCTION_DIR
from volumae.exceptions import (
    ConfigurationError,
    NonFiniteError,
    NonFiniteGradientError,
    NonFiniteLossError,
)
from volumae.logger import get_logger, release_loggers
from volumae.model import LossBreakdown, StepSeeds, VolumaeModel
from volumae.numerics import backward, no_grad
from volumae.orchestrator.data_storage import MetricsWriter, store_summary
from volumae.pipeline.context import run_context
from volumae.scenegen import Scene, load_scene
from volumae.schemas import RunInfo
from volumae.training.artifacts import dump_reconstruction
from volumae.training.checkpoint import (
    Checkpoint,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
)
from volumae.training.optimizer import AdamState, adamw_step, gradient_norm, learning_rate


# Fields that may change between an interrupted run and its resumption
RESUMABLE_FIELDS = ["checkpoint_interval"]
# Validation draws its masks from steps past the end of training
VALIDATION_STEP_OFFSET = 1


class TrainingSummary(BaseModel):
    steps: int
    resumed_from: Optional[int] = None
    final: Dict[str, float]
    validation: Optional[Dict[str, float]] = None
    wall_time_s: float
    run_directory: Path


def split_scenes(config: RunConfig, scene_files: Sequence[Path]) -> Dict[str, List[Scene]]:
    """
    The first `scenes.train` files are for training, the next `scenes.val`
    for validation.

    Raises:
        ConfigurationError: fewer scene files than the configuration asks for
    """

    needed = config.scenes.train + config.scenes.val
    if len(scene_files) < needed:
        raise ConfigurationError(
            f"The run needs {needed} scene files ({config.scenes.train} train, "
            f"{config.scenes.val} val), found {len(scene_files)}"
        )
    scenes = [load_scene(Path(path)) for path in scene_files[:needed]]
    return {"train": scenes[: config.scenes.train], "val": scenes[config.scenes.train :]}


def _mean_losses(breakdowns: Sequence[LossBreakdown]) -> Dict[str, float]:
    values = [breakdown.values() for breakdown in breakdowns]
    return {key: float(np.mean([value[key] for value in values])) for key in values[0]}


def _batch_loss(
    model: VolumaeModel, scenes: Sequence[Scene], config: RunConfig, step: int
) -> List[LossBreakdown]:
    return [
        model.forward(scene, StepSeeds.derive(config.seed, step, sample)).losses
        for sample, scene in enumerate(scenes)
    ]


def evaluate(
    model: VolumaeModel, scenes: Sequence[Scene], config: RunConfig
) -> Dict[str, float]:
    """Losses averaged over `scenes`, without building a compute graph"""

    with no_grad():
        breakdowns = _batch_loss(
            model, scenes, config, config.total_steps + VALIDATION_STEP_OFFSET
        )
    return _mean_losses(breakdowns)


def pretrain_run(
    config: RunConfig,
    scene_files: Sequence[Path],
    run_directory: Path,
    resume: bool = False,
    stop_after: Optional[int] = None,
) -> TrainingSummary:
    """
    Pre-train a model on the scene files, writing metrics, checkpoints,
    a summary and a reconstruction of the first training scene to `run_directory`.

    With `resume`, training continues from the checkpoint found in
    `run_directory`. `stop_after` ends the run early, after that many
    completed steps, as if it had been interrupted there.

    Raises:
        NonFiniteLossError: the loss or a gradient stopped being finite; the
            last good step is checkpointed first
    """

    run_directory = Path(run_directory)
    run_directory.mkdir(parents=True, exist_ok=True)
    run = RunInfo.new("pretrain", run_directory)
    token = run_context.set(run)
    try:
        return _pretrain(config, scene_files, run_directory, resume, stop_after)
    finally:
        run_context.reset(token)
        release_loggers(run.id)


def _pretrain(
    config: RunConfig,
    scene_files: Sequence[Path],
    run_directory: Path,
    resume: bool,
    stop_after: Optional[int],
) -> TrainingSummary:
    logger = get_logger()
    started = time.perf_counter()

    scenes = split_scenes(config, scene_files)
    model = VolumaeModel(config)
    for scene in scenes["train"] + scenes["val"]:
        model.check_scene(scene)

    params = model.parameters()
    optimizer = AdamState.zeros(params)
    rng = np.random.default_rng(config.seed)
    start = 0

    resumed_from = None
    if resume and (run_directory / CHECKPOINT_META_FILE).exists():
        checkpoint = load_checkpoint(run_directory)
        check_compatible(checkpoint, config, ignore=RESUMABLE_FIELDS)
        model.load_state_dict(checkpoint.parameters)
        optimizer = checkpoint.optimizer
        rng = checkpoint.restore_rng()
        start = resumed_from = checkpoint.step
        logger.info("Resuming from the checkpoint of step %d", start)
    elif resume:
        logger.warning("No checkpoint in %s, starting from scratch", run_directory)

    metrics = MetricsWriter(run_directory, resume=resumed_from is not None)
    if resumed_from is not None:
        metrics.truncate(start)

    n_params = sum(param.size for param in params)
    logger.info(
        "Pre-training %d parameters on %d scene(s) for %d steps",
        n_params,
        len(scenes["train"]),
        config.total_steps,
    )

    end = config.total_steps if stop_after is None else min(stop_after, config.total_steps)
    last: Dict[str, float] = {}

    for step in range(start, end):
        lr = learning_rate(step, config.optimizer, config.total_steps)
        model.zero_grad()

        rng_state = rng.bit_generator.state
        batch = rng.integers(0, len(scenes["train"]), size=config.batch_size)
        try:
            breakdowns = _batch_loss(model, [scenes["train"][i] for i in batch], config, step)
            loss = breakdowns[0].total
            for breakdown in breakdowns[1:]:
                loss = loss + breakdown.total
            loss = loss * (1.0 / len(breakdowns))

            if not math.isfinite(loss.item()):
                raise NonFiniteError("loss")

            backward(loss)
            grad_norm = gradient_norm(params)
            adamw_step(params, optimizer, lr, config.optimizer)
        except (NonFiniteError, NonFiniteGradientError) as exc:
            logger.error(
                "Step %d is not finite (%s), checkpointing the previous one", step, exc
            )
            rng.bit_generator.state = rng_state
            save_checkpoint(Checkpoint.capture(step, model, optimizer, rng), run_directory)
            raise NonFiniteLossError(step) from exc

        last = _mean_losses(breakdowns)
        metrics.append(
            [
                step,
                last["loss_total"],
                last["loss_chamfer"],
                last["loss_occ"],
                last["loss_img"],
                lr,
                grad_norm,
            ]
        )

        done = step + 1
        message = "Step %d/%d: loss %.5f (chamfer %.5f, occ %.5f, img %.5f), lr %.2e"
        args = (
            done,
            config.total_steps,
            last["loss_total"],
            last["loss_chamfer"],
            last["loss_occ"],
            last["loss_img"],
            lr,
        )
        if done % config.checkpoint_interval == 0 or done == end:
            logger.info(message, *args)
            save_checkpoint(Checkpoint.capture(done, model, optimizer, rng), run_directory)
        else:
            logger.debug(message, *args)

    validation = None
    if scenes["val"] and end == config.total_steps:
        validation = evaluate(model, scenes["val"], config)
        logger.info("Validation loss %.5f", validation["loss_total"])

    if end == config.total_steps:
        dump_reconstruction(
            model,
            scenes["train"][0],
            run_directory / RECONSTRUCTION_DIR,
            StepSeeds.derive(config.seed, config.total_steps, 0),
        )

    summary = TrainingSummary(
        steps=end,
        resumed_from=resumed_from,
        final=last,
        validation=validation,
        wall_time_s=time.perf_counter() - started,
        run_directory=run_directory,
    )
    store_summary(
        run_directory,
        {**summary.model_dump(mode="json"), "config": config.model_dump(mode="json")},
    )

    return summary
