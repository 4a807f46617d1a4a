"""
Self-checks of the system: finite-difference gradients, structural
invariants and brute-force oracles. Every check is a task of the `check`
pipeline and yields a `CheckResult`.
"""
import math
from functools import partial
from pathlib import Path
from typing import Callable, List, Optional

from pydantic import BaseModel

from volumae.config import RunConfig
from volumae.logger import get_logger, release_loggers
from volumae.orchestrator.data_storage import store_json
from volumae.orchestrator.executor import execute
from volumae.pipeline import Pipeline, Task
from volumae.pipeline.context import run_context
from volumae.schemas import CheckResult, RunInfo, RunStatus

from volumae.checks import acceptance, gradients, invariants, oracles


CHECKS: List[Callable[[RunConfig], CheckResult]] = [
    gradients.check_op_gradients,
    gradients.check_softmax_gradient,
    gradients.check_encoder_gradient,
    gradients.check_sca_gradient,
    gradients.check_mmim_gradient,
    gradients.check_fusion_end_to_end,
    gradients.check_decoder_gradients,
    gradients.check_pipeline_gradient,
    invariants.check_softmax_normalization,
    invariants.check_sampling_exactness,
    invariants.check_projection_round_trip,
    invariants.check_hit_views,
    invariants.check_volume_partition,
    invariants.check_mask_counts,
    invariants.check_encoder_permutation,
    invariants.check_sca_view_duplication,
    invariants.check_sca_degenerate,
    invariants.check_mmim_normalization,
    invariants.check_mmim_identity,
    invariants.check_scatter_gather,
    invariants.check_scene_consistency,
    invariants.check_scene_coverage,
    oracles.check_chamfer_oracle,
    oracles.check_bce_oracle,
    oracles.check_loss_literals,
    oracles.check_adamw_recurrence,
]


class CheckReport(BaseModel):
    results: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [result for result in self.results if not result.passed]


def _task_id(check: Callable) -> str:
    return check.__name__.removeprefix("check_")


def all_checks(config: RunConfig) -> List[Task]:
    return [
        Task(id=_task_id(check), run=partial(check, config), description=check.__doc__)
        for check in CHECKS
    ]


def run_checks(
    config: Optional[RunConfig] = None,
    report_out: Optional[Path] = None,
    overfit_config: Optional[RunConfig] = None,
) -> CheckReport:
    """
    Run every check on `config` (the tiny preset by default). A check raising
    an exception counts as failed, the others still run.

    With `overfit_config`, the desk overfit run is checked too. Its run
    directory is kept next to `report_out`, under `desk_overfit/`.
    """

    config = config or RunConfig.tiny()
    tasks = all_checks(config)
    if overfit_config is not None:
        directory = Path(report_out).parent / "desk_overfit" if report_out else None
        tasks.append(
            Task(
                id="desk_overfit",
                run=partial(acceptance.check_desk_overfit, overfit_config, directory),
                description=acceptance.check_desk_overfit.__doc__,
            )
        )
    pipeline = Pipeline(id="check", tasks=tasks)

    run = RunInfo.new("check")
    token = run_context.set(run)
    try:
        task_runs = execute(pipeline)

        results = []
        for task_run in task_runs:
            if task_run.status == RunStatus.COMPLETED:
                results.append(task_run.output)
            else:
                results.append(
                    CheckResult(
                        name=task_run.task_id,
                        measured=math.nan,
                        tolerance=math.nan,
                        passed=False,
                        detail=task_run.error,
                    )
                )

        report = CheckReport(results=results)
        for failure in report.failures:
            get_logger().warning(
                "Check %s failed: measured %g, tolerance %g",
                failure.name,
                failure.measured,
                failure.tolerance,
            )
    finally:
        run_context.reset(token)
        release_loggers(run.id)

    if report_out is not None:
        report_out = Path(report_out)
        store_json(report_out.parent, report_out.name, report.model_dump(mode="json"))

    return report
