import json
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from volumae.exceptions import SceneFormatError
from volumae.geometry import CameraModel, VolumeSpec, camera_ring
from volumae.scenegen.lidar import sample_lidar
from volumae.scenegen.render import pixel_center_directions, render_views
from volumae.scenegen.world import SceneSpec, World, cast_rays, sample_world


logger = logging.getLogger(__name__)

# Relative tolerance on the ray parameter when deciding that nothing
# stands between a camera and a LiDAR return
_OCCLUSION_TOLERANCE = 1e-6
CONSISTENCY_FOOTPRINTS = 1.5


class Scene(BaseModel):
    """Raw inputs of one sample: a LiDAR sweep and the multi-view images"""

    seed: int
    points: np.ndarray
    images: List[np.ndarray]
    cameras: List[CameraModel]
    spec: Optional[SceneSpec] = None
    depths: Optional[List[np.ndarray]] = None
    world: Optional[World] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def image_size(self):
        return self.images[0].shape[:2]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "points": self.points.tolist(),
            "cameras": [cam.to_dict() for cam in self.cameras],
            "images": [image.tolist() for image in self.images],
        }


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample a world from `spec.seed`, cast the LiDAR sweep and render the rig"""

    world = sample_world(spec)
    rig = camera_ring(
        spec.n_views,
        height=spec.ground_height + spec.camera_height,
        image_size=spec.image_size,
        horizontal_fov_deg=spec.horizontal_fov_deg,
    )
    points = sample_lidar(world, spec.lidar, spec.volume)
    images, depths = render_views(world, rig)

    logger.debug("Scene %d: %d points, %d views", spec.seed, points.shape[0], len(rig))

    return Scene(
        seed=spec.seed,
        points=points,
        images=images,
        cameras=rig,
        spec=spec,
        depths=depths,
        world=world,
    )


def save_scene(scene: Scene, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open(mode="w", encoding="utf-8") as f:
        json.dump(scene.to_json_dict(), f)
    return path


def load_scene(path: Path) -> Scene:
    try:
        with path.open(mode="r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFormatError(path, str(exc))

    try:
        points = np.asarray(data["points"], dtype=np.float64).reshape(-1, 4)
        cameras = [CameraModel.from_dict(cam) for cam in data["cameras"]]
        images = [np.asarray(image, dtype=np.float64) for image in data["images"]]
        seed = int(data["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(path, str(exc))

    if len(images) != len(cameras):
        raise SceneFormatError(path, "the number of images and cameras differ")
    for image, cam in zip(images, cameras):
        if image.shape != (cam.height, cam.width, 3):
            raise SceneFormatError(path, f"image shape {image.shape} doesn't match its camera")

    return Scene(seed=seed, points=points, images=images, cameras=cameras)


def occupied_cells(scene: Scene, volume: VolumeSpec) -> int:
    coords, valid = volume.coords_of_points(scene.points[:, :3])
    return int(np.unique(volume.flat_index(coords[valid])).size)


def cross_modal_consistency(scene: Scene) -> float:
    """
    Fraction of unoccluded in-frustum LiDAR points whose rendered depth agrees
    with their camera depth within 1.5 pixel footprints (depth / focal).

    The depth map is sampled at the pixel containing the point, so the rendered
    value belongs to the pixel center and not to the point's sub-pixel
    position. Re-casting the pixel center ray moves it there: the residual of a
    point is the map's error at the pixel center plus the LiDAR depth's error
    along the point's own ray.
    """

    if scene.world is None or scene.depths is None:
        raise ValueError("The scene must be generated, not loaded, to check consistency")

    points = scene.points[:, :3]
    checked = agreeing = 0

    for cam, depth_map in zip(scene.cameras, scene.depths):
        uv, depth, hit = cam.project_many(points)
        if not hit.any():
            continue

        center = cam.center
        # scaled so that t == 1 at the point itself
        t, _, _ = cast_rays(scene.world, center, points[hit] - center)
        visible = t >= 1.0 - _OCCLUSION_TOLERANCE

        point_depth = depth[hit][visible]
        cols = np.floor(uv[hit, 0][visible]).astype(np.int64)
        rows = np.floor(uv[hit, 1][visible]).astype(np.int64)

        rendered = depth_map[rows, cols]
        recast, _, _ = cast_rays(
            scene.world, center, pixel_center_directions(cam, rows, cols)
        )
        with np.errstate(invalid="ignore"):
            # sky seen by both the map and the re-cast ray is no error
            map_error = np.where(
                np.isinf(rendered) & np.isinf(recast), 0.0, rendered - recast
            )
            lidar_error = (t[visible] - 1.0) * point_depth
            residual = np.abs(map_error + lidar_error)

        footprint = point_depth / cam.focal
        checked += int(point_depth.size)
        agreeing += int(np.count_nonzero(residual <= CONSISTENCY_FOOTPRINTS * footprint))

    return agreeing / checked if checked else 1.0
