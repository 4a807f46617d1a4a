import math
from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel

from volumae.constants import SUMMARY_FILE
from volumae.exceptions import ConfigurationError
from volumae.orchestrator.data_storage import read_json, read_metrics


SMOOTHING_WINDOW = 10
LOSS_COLUMNS = ("loss_total", "loss_chamfer", "loss_occ", "loss_img")


class TrainingReport(BaseModel):
    steps: int
    initial: Dict[str, float]
    final: Dict[str, float]
    final_smoothed: Dict[str, float]
    reduction_factor: float
    """Step-0 total loss over the smoothed final total loss"""
    psnr_first_db: float
    psnr_last_db: float
    psnr_gain_db: float
    wall_time_s: Optional[float] = None


def psnr(mse: float) -> float:
    """Peak signal-to-noise ratio of pixels in [0, 1]"""

    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def summarize_metrics(metrics_path: Path, window: int = SMOOTHING_WINDOW) -> TrainingReport:
    """
    Summarize a metrics CSV. The final losses are smoothed with a trailing
    mean over `window` steps, the last PSNR uses the smoothed image loss.

    Raises:
        ConfigurationError: the file is missing, malformed or empty
    """

    metrics_path = Path(metrics_path)
    try:
        rows = read_metrics(metrics_path)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"Can't read the metrics file {metrics_path}: {exc}")
    if not rows:
        raise ConfigurationError(f"The metrics file {metrics_path} has no step")

    tail = rows[-min(window, len(rows)) :]
    initial = {name: rows[0][name] for name in LOSS_COLUMNS}
    final = {name: rows[-1][name] for name in LOSS_COLUMNS}
    smoothed = {name: sum(row[name] for row in tail) / len(tail) for name in LOSS_COLUMNS}

    reduction = (
        initial["loss_total"] / smoothed["loss_total"]
        if smoothed["loss_total"] > 0
        else math.inf
    )
    first_psnr = psnr(initial["loss_img"])
    last_psnr = psnr(smoothed["loss_img"])

    wall_time = None
    summary_path = metrics_path.parent / SUMMARY_FILE
    if summary_path.exists():
        wall_time = read_json(summary_path).get("wall_time_s")

    return TrainingReport(
        steps=len(rows),
        initial=initial,
        final=final,
        final_smoothed=smoothed,
        reduction_factor=reduction,
        psnr_first_db=first_psnr,
        psnr_last_db=last_psnr,
        psnr_gain_db=last_psnr - first_psnr,
        wall_time_s=wall_time,
    )
