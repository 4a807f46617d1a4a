from typing import Any, Callable, Optional

from pydantic import BaseModel, Field, model_validator

from ._utils import with_default_name


class Task(BaseModel):
    """A named unit of work: a check, an ablation arm or a training stage"""

    id: str
    run: Callable[[], Any] = Field(exclude=True)
    name: Optional[str]
    description: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _name_from_id(cls, data: Any) -> Any:
        # "sca_gradient" -> "Sca gradient"
        return with_default_name(data, str.capitalize)
