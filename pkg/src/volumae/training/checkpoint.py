"""
Checkpoints are two files side by side: `checkpoint.npz` with the parameters
and the optimizer moments, and `checkpoint.json` with everything else
(step, run configuration, random state and a manifest of the arrays).
"""
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from volumae.config import RunConfig
from volumae.constants import CHECKPOINT_ARRAYS_FILE, CHECKPOINT_META_FILE
from volumae.exceptions import CheckpointMismatchError, ConfigurationError
from volumae.model import VolumaeModel
from volumae.orchestrator.data_storage import get_data_path, read_json, store_json
from volumae.training.optimizer import AdamState


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Checkpoint(BaseModel):
    step: int
    """Number of completed training steps"""
    config: RunConfig
    parameters: Dict[str, np.ndarray]
    optimizer: AdamState
    rng_state: Dict[str, Any]

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @classmethod
    def capture(
        cls, step: int, model: VolumaeModel, optimizer: AdamState, rng: np.random.Generator
    ) -> "Checkpoint":
        return cls(
            step=step,
            config=model.config,
            parameters=model.state_dict(),
            optimizer=AdamState(
                step=optimizer.step,
                first={name: m.copy() for name, m in optimizer.first.items()},
                second={name: v.copy() for name, v in optimizer.second.items()},
            ),
            rng_state=rng.bit_generator.state,
        )

    def restore_rng(self) -> np.random.Generator:
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def checkpoint_files(path: Path) -> Tuple[Path, Path]:
    """(arrays, metadata) files of a checkpoint given either of them or their directory"""

    path = Path(path)
    directory = path if path.is_dir() or not path.suffix else path.parent
    return directory / CHECKPOINT_ARRAYS_FILE, directory / CHECKPOINT_META_FILE


def save_checkpoint(checkpoint: Checkpoint, run_directory: Path) -> Path:
    arrays = {f"param/{name}": value for name, value in checkpoint.parameters.items()}
    arrays.update({f"adam_m/{name}": m for name, m in checkpoint.optimizer.first.items()})
    arrays.update({f"adam_v/{name}": v for name, v in checkpoint.optimizer.second.items()})

    arrays_path = get_data_path(run_directory, CHECKPOINT_ARRAYS_FILE)
    with arrays_path.open(mode="wb") as f:
        np.savez(f, **arrays)

    store_json(
        run_directory,
        CHECKPOINT_META_FILE,
        {
            "format": FORMAT_VERSION,
            "step": checkpoint.step,
            "optimizer_step": checkpoint.optimizer.step,
            "config": checkpoint.config.model_dump(mode="json"),
            "rng_state": checkpoint.rng_state,
            "manifest": {
                name: list(value.shape) for name, value in checkpoint.parameters.items()
            },
        },
    )
    logger.debug("Checkpoint of step %d written to %s", checkpoint.step, run_directory)
    return arrays_path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Raises:
        ConfigurationError: there is no checkpoint at `path`
        CheckpointMismatchError: the arrays don't match the manifest
    """

    arrays_path, meta_path = checkpoint_files(path)
    if not arrays_path.exists() or not meta_path.exists():
        raise ConfigurationError(f"No checkpoint found at {path}")
    meta = read_json(meta_path)

    with np.load(arrays_path) as arrays:
        stored = {key: arrays[key] for key in arrays.files}

    def section(prefix: str) -> Dict[str, np.ndarray]:
        return {
            key[len(prefix) :]: value for key, value in stored.items() if key.startswith(prefix)
        }

    parameters = section("param/")
    for name, shape in meta["manifest"].items():
        if name not in parameters:
            raise CheckpointMismatchError(f"parameters.{name}", shape, None)
        if list(parameters[name].shape) != list(shape):
            raise CheckpointMismatchError(
                f"parameters.{name}", list(shape), list(parameters[name].shape)
            )

    return Checkpoint(
        step=meta["step"],
        config=RunConfig.model_validate(meta["config"]),
        parameters=parameters,
        optimizer=AdamState(
            step=meta["optimizer_step"], first=section("adam_m/"), second=section("adam_v/")
        ),
        rng_state=meta["rng_state"],
    )


def _flatten(data: Any, prefix: str = "") -> Iterator[Tuple[str, Any]]:
    if isinstance(data, dict):
        for key, value in data.items():
            yield from _flatten(value, f"{prefix}{key}.")
    else:
        yield prefix[:-1], data


def config_differences(expected: RunConfig, found: RunConfig) -> List[Tuple[str, Any, Any]]:
    """Dotted names of the fields whose values differ, with both values"""

    left = dict(_flatten(expected.model_dump(mode="json")))
    right = dict(_flatten(found.model_dump(mode="json")))
    return [
        (name, left.get(name), right.get(name))
        for name in sorted(set(left) | set(right))
        if left.get(name) != right.get(name)
    ]


def check_compatible(
    checkpoint: Checkpoint,
    config: RunConfig,
    ignore: Optional[List[str]] = None,
) -> None:
    """
    Raises:
        CheckpointMismatchError: naming the first field of `config` the
            checkpoint was written with a different value of
    """

    ignore = ignore or []
    for name, expected, found in config_differences(config, checkpoint.config):
        if not any(name == field or name.startswith(field + ".") for field in ignore):
            raise CheckpointMismatchError(name, expected, found)


def restore_model(checkpoint: Checkpoint) -> VolumaeModel:
    model = VolumaeModel(checkpoint.config)
    own = {name: param.shape for name, param in model.named_parameters()}
    for name, shape in own.items():
        stored = checkpoint.parameters.get(name)
        if stored is None or stored.shape != shape:
            raise CheckpointMismatchError(
                f"parameters.{name}", shape, None if stored is None else stored.shape
            )
    model.load_state_dict(checkpoint.parameters)
    return model
