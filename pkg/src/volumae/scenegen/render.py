from typing import List, Sequence, Tuple

import numpy as np

from volumae.geometry import CameraModel
from volumae.scenegen.world import NO_HIT, World, cast_rays


SKY_COLOR = (0.62, 0.75, 0.93)
SUN_DIRECTION = np.array([0.35, -0.25, 0.9]) / np.linalg.norm([0.35, -0.25, 0.9])
AMBIENT = 0.3


def pixel_center_directions(cam: CameraModel, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Ego-frame ray directions through the centers of the given pixels, scaled
    so that the ray parameter equals the camera-frame depth of the hit point.
    """

    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    pixels = np.stack([cols + 0.5, rows + 0.5, np.ones_like(rows)], axis=-1)
    K3 = cam.intrinsics[:, :3]
    camera_dirs = np.linalg.solve(K3, pixels.T).T
    rotation = cam.extrinsics[:3, :3]
    return camera_dirs @ rotation


def pixel_rays(cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """Rays through every pixel center, row-major"""

    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return cam.center, pixel_center_directions(cam, rows, cols)


def render_view(world: World, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    origin, directions = pixel_rays(cam)
    depth, surface, normal = cast_rays(world, origin, directions)

    shading = AMBIENT + (1.0 - AMBIENT) * np.clip(normal @ SUN_DIRECTION, 0.0, None)
    colors = world.surface_albedo(surface) * shading[:, None]
    colors[surface == NO_HIT] = SKY_COLOR

    shape = (cam.height, cam.width)
    return np.clip(colors, 0.0, 1.0).reshape(*shape, 3), depth.reshape(shape)


def render_views(
    world: World, rig: Sequence[CameraModel]
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Ray-cast every view: per view an RGB image in [0, 1] of shape (height,
    width, 3) and a depth map of camera-frame depths (inf where only sky is seen).
    """

    images, depths = [], []
    for cam in rig:
        image, depth = render_view(world, cam)
        images.append(image)
        depths.append(depth)
    return images, depths
