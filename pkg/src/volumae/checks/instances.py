"""Small seeded instances shared by the checks"""
from typing import List, Tuple

import numpy as np

from volumae.config import MMIMConfig, SCAConfig
from volumae.geometry import CameraModel, VolumeSpec
from volumae.numerics import Tensor


WIDTH = 8
PATCH_SIZE = 4
VIEW_SIZE = 16


def small_volume() -> VolumeSpec:
    """4 x 4 x 2 cells of 4 x 4 x 2 m around the ego origin"""

    return VolumeSpec(
        x_range=(-8.0, 8.0), y_range=(-8.0, 8.0), z_range=(-2.0, 2.0), cell_size=(4.0, 4.0, 2.0)
    )


def small_camera(yaw_deg: float = 0.0) -> CameraModel:
    """One 16 x 16 view looking along +x from just above the origin"""

    return CameraModel.looking_at_yaw(
        yaw_deg, (0.0, 0.0, 0.5), width=VIEW_SIZE, height=VIEW_SIZE, horizontal_fov_deg=90.0
    )


def small_sca_config(**overrides) -> SCAConfig:
    settings = {"blocks": 1, "hidden": WIDTH, "n_ref": 2, "points": 2, "heads": 2}
    return SCAConfig(**{**settings, **overrides})


def small_mmim_config(**overrides) -> MMIMConfig:
    return MMIMConfig(**{"blocks": 1, "heads": 2, "points": 2, "hidden": 16, **overrides})


def view_grids(rng: np.random.Generator, n_views: int = 1) -> List[Tensor]:
    grid = VIEW_SIZE // PATCH_SIZE
    return [Tensor(rng.normal(size=(WIDTH, grid, grid))) for _ in range(n_views)]


def random_leaf(rng: np.random.Generator, *shape: int, name: str = "x") -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def off_grid(rng: np.random.Generator, shape: Tuple[int, ...], high: float) -> np.ndarray:
    """Locations in [0, high) kept away from grid nodes, where interpolation has a kink"""

    locations = rng.uniform(0.0, high, size=shape)
    return np.floor(locations) + 0.1 + 0.8 * (locations - np.floor(locations))
