from datetime import datetime, timezone
import traceback
from typing import List

from volumae.logger import get_logger
from volumae.pipeline.pipeline import Pipeline, Task
from volumae.pipeline.context import stage_context
from volumae.schemas import RunStatus, TaskRun


def utcnow():
    return datetime.now(tz=timezone.utc)


def _execute_task(task: Task) -> TaskRun:
    logger = get_logger()
    task_run = TaskRun(task_id=task.id, status=RunStatus.RUNNING)
    start_time = utcnow()

    try:
        task_run.output = task.run()
        task_run.status = RunStatus.COMPLETED
    except Exception as e:
        logger.error(str(e) or type(e).__name__, exc_info=e)
        task_run.status = RunStatus.FAILED
        task_run.error = "".join(traceback.format_exception_only(type(e), e)).strip()
    finally:
        task_run.duration = (utcnow() - start_time).total_seconds() * 1000

    return task_run


def execute(pipeline: Pipeline) -> List[TaskRun]:
    """
    Run every task of the pipeline in order, each within its own stage context.

    A failing task is logged with its traceback and marked as failed; the
    following tasks still run unless the pipeline has `stop_on_failure`.
    """

    logger = get_logger()
    logger.info("Executing pipeline `%s` (%d tasks)", pipeline.id, len(pipeline.tasks))

    runs: List[TaskRun] = []

    for task in pipeline.tasks:
        logger.info("Executing task %s", task.id)

        stage_token = stage_context.set(task.id)
        try:
            task_run = _execute_task(task)
        finally:
            stage_context.reset(stage_token)

        runs.append(task_run)

        if task_run.status == RunStatus.FAILED and pipeline.stop_on_failure:
            logger.warning("Task %s failed, skipping the remaining tasks", task.id)
            break

    failed = sum(run.status == RunStatus.FAILED for run in runs)
    logger.info("Pipeline `%s` finished, %d task(s) failed", pipeline.id, failed)

    return runs
