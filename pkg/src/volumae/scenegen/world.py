import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, model_validator

from volumae.geometry import VolumeSpec


logger = logging.getLogger(__name__)

GROUND_ID = 0
NO_HIT = -1
GROUND_INTENSITY = 0.2
GROUND_ALBEDO = (0.42, 0.40, 0.37)
# Ray parameters below this are treated as starting on the surface
_RAY_EPSILON = 1e-9
_PLACEMENT_ATTEMPTS = 1000


class LidarConfig(BaseModel):
    azimuth_steps: int = Field(default=360, ge=1)
    elevation_min_deg: float = -20.0
    elevation_max_deg: float = 5.0
    n_rings: int = Field(default=8, ge=1)

    model_config = ConfigDict(extra="forbid", frozen=True)

    def directions(self) -> np.ndarray:
        """Unit ray directions, ring-major"""

        elevations = np.deg2rad(
            np.linspace(self.elevation_min_deg, self.elevation_max_deg, self.n_rings)
        )
        azimuths = np.deg2rad(np.arange(self.azimuth_steps) * 360.0 / self.azimuth_steps)
        el, az = np.meshgrid(elevations, azimuths, indexing="ij")
        return np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        ).reshape(-1, 3)


class SceneSpec(BaseModel):
    seed: NonNegativeInt = 0
    n_boxes: NonNegativeInt = 8
    box_size_min: Tuple[float, float, float] = (1.5, 1.2, 1.0)
    box_size_max: Tuple[float, float, float] = (4.5, 2.5, 2.2)
    placement_range: float = 40.0
    min_distance: float = 5.0
    ground_height: float = -1.8
    lidar: LidarConfig = Field(default_factory=LidarConfig)
    n_views: int = Field(default=6, ge=1)
    camera_height: float = 1.6
    horizontal_fov_deg: float = 70.0
    image_size: Tuple[int, int] = (64, 176)
    volume: VolumeSpec = Field(default_factory=VolumeSpec)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def check_placement(self) -> "SceneSpec":
        box_radius = float(np.hypot(self.box_size_max[0], self.box_size_max[1])) / 2
        reach = self.placement_range + box_radius
        for low, high in (self.volume.x_range, self.volume.y_range):
            if -reach < low or reach >= high:
                raise ValueError("boxes can be placed outside the perception range")
        z_low, z_high = self.volume.z_range
        box_top = self.ground_height + self.box_size_max[2]
        if not (z_low <= self.ground_height and box_top < z_high):
            raise ValueError("the ground or the box tops are outside the perception range")
        if self.min_distance >= self.placement_range:
            raise ValueError("min_distance must be smaller than placement_range")
        return self

    @property
    def camera_yaws(self) -> np.ndarray:
        return np.arange(self.n_views) * 360.0 / self.n_views


class World(BaseModel):
    """Yawed boxes standing on a flat ground plane"""

    centers: np.ndarray
    sizes: np.ndarray
    yaws: np.ndarray
    albedo: np.ndarray
    intensity: np.ndarray
    ground_height: float

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def n_boxes(self) -> int:
        return int(self.centers.shape[0])

    def surface_albedo(self, surface: np.ndarray) -> np.ndarray:
        colors = np.concatenate([np.asarray([GROUND_ALBEDO]), self.albedo], axis=0)
        return colors[np.clip(surface, 0, None)]

    def surface_intensity(self, surface: np.ndarray) -> np.ndarray:
        values = np.concatenate([[GROUND_INTENSITY], self.intensity])
        return values[np.clip(surface, 0, None)]


def sample_world(spec: SceneSpec) -> World:
    rng = np.random.default_rng(spec.seed)

    centers, sizes = [], []
    for _ in range(spec.n_boxes):
        size = rng.uniform(spec.box_size_min, spec.box_size_max)
        for _ in range(_PLACEMENT_ATTEMPTS):
            xy = rng.uniform(-spec.placement_range, spec.placement_range, size=2)
            if np.hypot(*xy) >= spec.min_distance + np.hypot(size[0], size[1]) / 2:
                break
        else:
            raise RuntimeError("Couldn't place a box away from the sensor")
        centers.append([xy[0], xy[1], spec.ground_height + size[2] / 2])
        sizes.append(size)

    n = spec.n_boxes
    world = World(
        centers=np.asarray(centers, dtype=np.float64).reshape(n, 3),
        sizes=np.asarray(sizes, dtype=np.float64).reshape(n, 3),
        yaws=rng.uniform(0.0, np.pi, size=n),
        albedo=rng.uniform(0.15, 0.95, size=(n, 3)),
        intensity=rng.uniform(0.3, 1.0, size=n),
        ground_height=spec.ground_height,
    )
    logger.debug("Sampled %d boxes for seed %d", n, spec.seed)
    return world


def cast_rays(
    world: World, origins: np.ndarray, directions: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Nearest intersection of each ray with the ground or a box.

    Returns (t (N,), surface (N,), normal (N, 3)); surface is NO_HIT,
    GROUND_ID or 1 + box index, t is inf for NO_HIT. Hit points are
    origin + t * direction, directions need not be unit length.
    """

    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), directions.shape)
    n_rays = directions.shape[0]

    candidates = np.full((n_rays, world.n_boxes + 1), np.inf)
    normals = np.zeros((n_rays, world.n_boxes + 1, 3))

    with np.errstate(divide="ignore", invalid="ignore"):
        descending = directions[:, 2] < 0
        t_ground = (world.ground_height - origins[:, 2]) / directions[:, 2]
        ground_hit = descending & (t_ground > _RAY_EPSILON)
        candidates[ground_hit, GROUND_ID] = t_ground[ground_hit]
        normals[:, GROUND_ID] = (0.0, 0.0, 1.0)

        for b in range(world.n_boxes):
            cos, sin = np.cos(world.yaws[b]), np.sin(world.yaws[b])
            # rows are the box axes expressed in the ego frame
            axes = np.array([[cos, sin, 0.0], [-sin, cos, 0.0], [0.0, 0.0, 1.0]])
            local_origin = (origins - world.centers[b]) @ axes.T
            local_direction = directions @ axes.T
            half = world.sizes[b] / 2

            t1 = (-half - local_origin) / local_direction
            t2 = (half - local_origin) / local_direction
            # rays parallel to a slab: inside it for all t, or never
            parallel = local_direction == 0
            inside = np.abs(local_origin) <= half
            t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
            t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))

            entry = t_near.max(axis=1)
            exit_ = t_far.min(axis=1)
            hit = (entry <= exit_) & (entry > _RAY_EPSILON)
            candidates[hit, b + 1] = entry[hit]

            face = np.argmax(t_near, axis=1)
            local_normal = np.zeros((n_rays, 3))
            local_normal[np.arange(n_rays), face] = -np.sign(
                local_direction[np.arange(n_rays), face]
            )
            normals[:, b + 1] = local_normal @ axes

    surface_slot = np.argmin(candidates, axis=1)
    t = candidates[np.arange(n_rays), surface_slot]
    surface = np.where(np.isfinite(t), surface_slot, NO_HIT)
    normal = normals[np.arange(n_rays), surface_slot]
    return t, surface, normal
