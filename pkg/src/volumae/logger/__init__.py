import logging
import sys

from volumae.config import settings
from volumae.constants import MANUAL_RUN_ID
from volumae.logger.formatter import TEXT_FORMAT, JsonFormatter
from volumae.orchestrator.data_storage import get_logs_filename
from volumae.pipeline.context import run_context, stage_context


def get_logger() -> logging.LoggerAdapter:
    """Get a logger for the current run and stage.

    Records always go to stderr (JSON or plain text depending on the
    `json_logs` setting, filtered by `log_level`); when the run has a
    directory they are also appended, unfiltered, to its `logs.jsonl`.

    Returns:
        LoggerAdapter: a logger carrying the run and stage ids
    """

    run = run_context.get(None)
    stage = stage_context.get(None)
    run_id = run.id if run else MANUAL_RUN_ID

    # One logger per run and one per (run, stage), never parent and child,
    # otherwise records would be emitted twice
    logger_name = f"volumae.{run_id}"
    if stage:
        logger_name += f"-{stage}"

    logger = logging.getLogger(logger_name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # `getLogger` returns the cached instance, handlers are only added once
    if not logger.handlers:
        json_formatter = JsonFormatter(run=run_id, stage=stage)

        stderr_handler = logging.StreamHandler(sys.stderr)
        stderr_handler.setLevel(settings.log_level)
        stderr_handler.setFormatter(
            json_formatter if settings.json_logs else logging.Formatter(TEXT_FORMAT)
        )
        logger.addHandler(stderr_handler)

        if run and run.directory:
            file_handler = logging.FileHandler(
                get_logs_filename(run.directory), encoding="utf-8"
            )
            file_handler.setFormatter(json_formatter)
            logger.addHandler(file_handler)

    return logging.LoggerAdapter(logger, {"run": run_id, "stage": stage})


def release_loggers(run_id: str) -> None:
    """Close the handlers of every logger created for `run_id`"""

    prefix = f"volumae.{run_id}"
    for name in list(logging.root.manager.loggerDict):
        if name == prefix or name.startswith(prefix + "-"):
            logger = logging.getLogger(name)
            for handler in list(logger.handlers):
                logger.removeHandler(handler)
                handler.close()
