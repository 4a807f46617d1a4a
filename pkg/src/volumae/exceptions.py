from pathlib import Path
from typing import Iterable, Optional


class VolumaeError(Exception):
    """Base class of every error raised on purpose by volumae"""


class ConfigurationError(VolumaeError):
    def __init__(self, message: str, errors: Optional[Iterable[str]] = None) -> None:
        self.errors = list(errors or [])
        if self.errors:
            message = message + ": " + "; ".join(self.errors)
        super().__init__(message)


class NonFiniteError(VolumaeError):
    operation: str

    def __init__(self, operation: str) -> None:
        super().__init__(f"Non-finite values encountered in `{operation}`")
        self.operation = operation


class GraphError(VolumaeError):
    pass


class DegenerateProjectionError(VolumaeError):
    depth: float

    def __init__(self, depth: float) -> None:
        super().__init__(
            f"The point lies on the camera plane (depth={depth!r}), it can't be projected"
        )
        self.depth = depth


class EmptyInputError(VolumaeError):
    pass


class EmptyMaskError(VolumaeError):
    pass


class NonFiniteGradientError(VolumaeError):
    step: int

    def __init__(self, step: int, parameter: str) -> None:
        super().__init__(f"Non-finite gradient for `{parameter}` at step {step}")
        self.step = step
        self.parameter = parameter


class NonFiniteLossError(VolumaeError):
    step: int

    def __init__(self, step: int) -> None:
        super().__init__(f"The loss became non-finite at step {step}")
        self.step = step


class CheckpointMismatchError(VolumaeError):
    field: str

    def __init__(self, field: str, expected, found) -> None:
        super().__init__(
            f"Checkpoint is incompatible: `{field}` is {found!r}, expected {expected!r}"
        )
        self.field = field


class SceneFormatError(VolumaeError):
    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(f"The scene file {path} is invalid: {reason}")
        self.path = path


class InvalidDataPath(VolumaeError):
    path: Path

    def __init__(self, path: Path) -> None:
        message = f"The path {path} is invalid"
        super().__init__(message)
        self.path = path
