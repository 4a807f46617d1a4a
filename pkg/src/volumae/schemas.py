from enum import Enum
from itertools import count
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, NonNegativeFloat


_run_counter = count(1)


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class RunInfo(BaseModel):
    """Identity of one CLI command execution, used to route its logs"""

    id: str
    directory: Optional[Path] = None

    model_config = ConfigDict(frozen=True)

    @classmethod
    def new(cls, name: str, directory: Optional[Path] = None) -> "RunInfo":
        # Loggers are cached by name, ids must never repeat within a process
        return cls(id=f"{name}-{next(_run_counter)}", directory=directory)


class TaskRun(BaseModel):
    duration: Optional[NonNegativeFloat] = 0
    """Task duration in milliseconds"""
    status: RunStatus = RunStatus.PENDING
    task_id: str
    output: Any = None
    error: Optional[str] = None


class CheckResult(BaseModel):
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: Optional[str] = None
    values: Dict[str, float] = {}
    """Other measurements worth keeping in the report"""

    @classmethod
    def at_most(cls, name: str, measured: float, tolerance: float, **kwargs) -> "CheckResult":
        return cls(
            name=name,
            measured=measured,
            tolerance=tolerance,
            passed=bool(measured <= tolerance),
            **kwargs,
        )

    @classmethod
    def at_least(cls, name: str, measured: float, tolerance: float, **kwargs) -> "CheckResult":
        return cls(
            name=name,
            measured=measured,
            tolerance=tolerance,
            passed=bool(measured >= tolerance),
            **kwargs,
        )
