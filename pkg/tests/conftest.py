import os
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from volumae.config import RunConfig
from volumae.orchestrator.data_storage import scene_filename
from volumae.scenegen import Scene, generate_scene, save_scene


@lru_cache(maxsize=None)
def _tiny_scene(seed: int) -> Scene:
    config = RunConfig.tiny()
    return generate_scene(config.scenes.scene_spec(seed, config.volume))


@pytest.fixture(autouse=True)
def set_cwd(tmp_path: Path):
    print(f"CWD = {tmp_path}")
    os.chdir(tmp_path)
    yield tmp_path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> RunConfig:
    return RunConfig.tiny()


@pytest.fixture
def tiny_scene() -> Scene:
    return _tiny_scene(0)


@pytest.fixture
def scene_dir(tmp_path: Path) -> Path:
    """Two tiny scene files, seeds 0 and 1"""

    directory = tmp_path / "scenes"
    for seed in (0, 1):
        save_scene(_tiny_scene(seed), scene_filename(directory, seed))
    return directory
