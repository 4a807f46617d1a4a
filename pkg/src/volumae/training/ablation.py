"""
Configuration sweeps over the input modality, the interaction space, the
interaction module and the masking ratios, each arm being a short pre-training
run executed as one task of a pipeline.
"""
import math
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from volumae.config import InteractionSpace, RunConfig, validate_run_config
from volumae.constants import ABLATION_FILE
from volumae.logger import get_logger, release_loggers
from volumae.model.fusion import MMIM, mmim_fuse
from volumae.model.network import StepSeeds, VolumaeModel
from volumae.numerics import no_grad, ops
from volumae.orchestrator.data_storage import store_json
from volumae.orchestrator.executor import execute
from volumae.pipeline import Pipeline, Task
from volumae.pipeline.context import run_context
from volumae.scenegen import load_scene
from volumae.schemas import RunInfo, RunStatus
from volumae.training.checkpoint import load_checkpoint, restore_model
from volumae.training.loop import pretrain_run


NORMALIZATION_TOLERANCE = 1e-12
MASK_RATIO_PAIRS: Tuple[Tuple[float, float], ...] = (
    (0.5, 0.5),
    (0.6, 0.6),
    (0.7, 0.75),
    (0.8, 0.8),
    (0.9, 0.9),
)


class Modality(str, Enum):
    BOTH = "both"
    LIDAR = "lidar"
    CAMERA = "camera"

    @property
    def loss_weights(self) -> Tuple[float, float]:
        return {
            Modality.BOTH: (1.0, 1.0),
            Modality.LIDAR: (1.0, 0.0),
            Modality.CAMERA: (0.0, 1.0),
        }[self]


class AblationArm(BaseModel):
    id: str
    interaction_space: InteractionSpace = InteractionSpace.VOLUME3D
    modality: Modality = Modality.BOTH
    interaction: bool = True
    mask_ratios: Optional[Tuple[float, float]] = None

    def apply(self, config: RunConfig, steps: int) -> RunConfig:
        weight_voxel, weight_image = self.modality.loss_weights
        overrides: Dict = {
            "total_steps": steps,
            "checkpoint_interval": steps,
            "loss": {"weight_voxel": weight_voxel, "weight_image": weight_image},
        }
        if not self.interaction:
            overrides["mmim"] = {"blocks": 0}
        if self.mask_ratios is not None:
            overrides["mask_ratio_lidar"], overrides["mask_ratio_camera"] = self.mask_ratios
        derived = validate_run_config(overrides, base=config)
        return derived.with_interaction_space(self.interaction_space)


class ArmResult(BaseModel):
    id: str
    status: RunStatus
    duration_ms: float
    interaction_space: InteractionSpace
    modality: Modality
    interaction: bool
    mask_ratios: Tuple[float, float]
    final: Optional[Dict[str, float]] = None
    finite: bool = False
    invariants: Dict[str, bool] = {}
    error: Optional[str] = None


def ablation_arms(with_mask_ratios: bool = False) -> List[AblationArm]:
    arms = [
        AblationArm(
            id=f"{space.value}-{modality.value}", interaction_space=space, modality=modality
        )
        for space in InteractionSpace
        for modality in Modality
    ]
    arms.append(AblationArm(id="volume3d-both-no-mmim", interaction=False))
    if with_mask_ratios:
        arms += [
            AblationArm(id=f"mask-{lidar}-{camera}", mask_ratios=(lidar, camera))
            for lidar, camera in MASK_RATIO_PAIRS
        ]
    return arms


def structural_invariants(model: VolumaeModel, scene_file: Path) -> Dict[str, bool]:
    """
    Attention weights of the trained model sum to one over their sampling
    points, and an interaction module without blocks returns its inputs.
    """

    scene = load_scene(Path(scene_file))
    with no_grad():
        result = model.forward(scene, StepSeeds.derive(model.config.seed, 0))
        queries = model.sca.queries()
        errors = [
            np.max(np.abs(block.attention_weights(queries).numpy().sum(axis=-1) - 1.0))
            for block in model.sca.blocks
        ]
        fused = ops.concat([result.fused_lidar.tokens(), result.fused_camera.tokens()], axis=1)
        errors += [
            np.max(np.abs(block.attention_weights(fused).numpy().sum(axis=-1) - 1.0))
            for block in model.mmim.blocks
        ]

        empty = MMIM(
            model.config.width,
            model.config.mmim.model_copy(update={"blocks": 0}),
            np.random.default_rng(0),
        )
        lidar, camera = mmim_fuse(result.fused_lidar, result.fused_camera, empty)

    identity = np.array_equal(lidar.data.numpy(), result.fused_lidar.data.numpy()) and (
        np.array_equal(camera.data.numpy(), result.fused_camera.data.numpy())
    )
    return {
        "attention_weights_normalized": bool(max(errors) <= NORMALIZATION_TOLERANCE),
        "empty_interaction_is_identity": bool(identity),
    }


def _run_arm(
    arm: AblationArm, config: RunConfig, scene_files: Sequence[Path], directory: Path
) -> dict:
    summary = pretrain_run(config, scene_files, directory)
    model = restore_model(load_checkpoint(directory))
    return {
        "final": summary.final,
        "finite": all(math.isfinite(value) for value in summary.final.values()),
        "invariants": structural_invariants(model, scene_files[0]),
    }


def ablate(
    config: RunConfig,
    scene_files: Sequence[Path],
    out: Path,
    steps: int,
    with_mask_ratios: bool = False,
) -> List[ArmResult]:
    """
    Train every arm for `steps` steps in its own directory under `out` and
    write the outcome of all arms to `out/ablation.json`. A failing arm is
    reported as failed, the others still run.
    """

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    arms = ablation_arms(with_mask_ratios)
    configs = {arm.id: arm.apply(config, steps) for arm in arms}

    pipeline = Pipeline(
        id="ablation",
        tasks=[
            Task(
                id=arm.id,
                run=partial(_run_arm, arm, configs[arm.id], list(scene_files), out / arm.id),
            )
            for arm in arms
        ],
    )

    run = RunInfo.new("ablation", out)
    token = run_context.set(run)
    try:
        logger = get_logger()
        logger.info("Running %d ablation arms of %d steps", len(arms), steps)
        task_runs = execute(pipeline)
    finally:
        run_context.reset(token)
        release_loggers(run.id)

    results = []
    for arm, task_run in zip(arms, task_runs):
        arm_config = configs[arm.id]
        results.append(
            ArmResult(
                id=arm.id,
                status=task_run.status,
                duration_ms=task_run.duration or 0.0,
                interaction_space=arm_config.interaction_space,
                modality=arm.modality,
                interaction=arm.interaction,
                mask_ratios=(arm_config.mask_ratio_lidar, arm_config.mask_ratio_camera),
                error=task_run.error,
                **(task_run.output or {}),
            )
        )

    store_json(
        out,
        ABLATION_FILE,
        {"steps": steps, "arms": [result.model_dump(mode="json") for result in results]},
    )
    return results
