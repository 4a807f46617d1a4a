from contextvars import ContextVar
from typing import Optional

from volumae.schemas import RunInfo


run_context: ContextVar[RunInfo] = ContextVar("run")
stage_context: ContextVar[Optional[str]] = ContextVar("stage", default=None)
