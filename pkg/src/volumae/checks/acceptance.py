"""Training acceptance: a desk-scale run has to overfit a single scene"""
import tempfile
from pathlib import Path
from typing import Optional

from volumae.config import RunConfig
from volumae.constants import METRICS_FILE
from volumae.orchestrator.data_storage import scene_filename
from volumae.scenegen import generate_scene, save_scene
from volumae.schemas import CheckResult
from volumae.training import pretrain_run, summarize_metrics


OVERFIT_LOSS_RATIO = 0.2
OVERFIT_PSNR_GAIN_DB = 6.0


def _overfit(config: RunConfig, directory: Path) -> CheckResult:
    scene = generate_scene(config.scenes.scene_spec(config.seed, config.volume))
    scene_file = save_scene(scene, scene_filename(directory / "scenes", config.seed))

    pretrain_run(config, [scene_file], directory / "run")
    report = summarize_metrics(directory / "run" / METRICS_FILE)

    loss_ratio = report.final_smoothed["loss_total"] / report.initial["loss_total"]
    gain = report.psnr_gain_db
    return CheckResult(
        name="desk_overfit",
        measured=loss_ratio,
        tolerance=OVERFIT_LOSS_RATIO,
        passed=bool(loss_ratio <= OVERFIT_LOSS_RATIO and gain >= OVERFIT_PSNR_GAIN_DB),
        detail=(
            f"PSNR gain {gain:.2f} dB (at least {OVERFIT_PSNR_GAIN_DB:g}), "
            f"seed {config.seed}, {report.steps} steps"
        ),
        values={
            "loss_ratio": loss_ratio,
            "psnr_gain_db": gain,
            "psnr_first_db": report.psnr_first_db,
            "psnr_last_db": report.psnr_last_db,
            "seed": float(config.seed),
            "steps": float(report.steps),
        },
    )


def check_desk_overfit(config: RunConfig, directory: Optional[Path] = None) -> CheckResult:
    """
    Pre-train on the scene of `config.seed` alone. The smoothed final loss
    must fall to a fifth of the first one and the image PSNR gain 6 dB.

    The run is kept in `directory` when given, otherwise it is thrown away.
    """

    if directory is not None:
        return _overfit(config, Path(directory))
    with tempfile.TemporaryDirectory(prefix="volumae-overfit-") as scratch:
        return _overfit(config, Path(scratch))
