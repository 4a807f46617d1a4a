from typing import Any, List, Optional

from pydantic import BaseModel, model_validator

from .task import Task
from ._utils import with_default_name


class Pipeline(BaseModel):
    """Tasks executed in order under a single run"""

    id: str
    tasks: List[Task]
    name: Optional[str]
    description: Optional[str] = None
    stop_on_failure: bool = False

    @model_validator(mode="before")
    @classmethod
    def _name_from_id(cls, data: Any) -> Any:
        return with_default_name(data, str.title)

    @model_validator(mode="after")
    def _unique_task_ids(self) -> "Pipeline":
        ids = [task.id for task in self.tasks]
        duplicated = sorted({task_id for task_id in ids if ids.count(task_id) > 1})
        if duplicated:
            raise ValueError(f"duplicated task ids: {', '.join(duplicated)}")
        return self
