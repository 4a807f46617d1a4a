import numpy as np

from volumae.geometry import VolumeSpec
from volumae.scenegen.world import GROUND_ID, LidarConfig, World, cast_rays


SENSOR_ORIGIN = np.zeros(3)


def sample_lidar(world: World, lidar: LidarConfig, volume: VolumeSpec) -> np.ndarray:
    """
    Spinning-LiDAR point cloud: the nearest surface hit of every
    (azimuth, elevation) ray from the sensor origin, kept when it falls inside
    the perception range.

    Returns an (N, 4) array of (x, y, z, intensity).
    """

    directions = lidar.directions()
    t, surface, _ = cast_rays(world, SENSOR_ORIGIN, directions)

    hit = surface >= 0
    points = SENSOR_ORIGIN + t[hit, None] * directions[hit]
    surface = surface[hit]
    # the plane equation is exact, keep ground returns exactly on it
    points[surface == GROUND_ID, 2] = world.ground_height

    inside = volume.contains(points)
    points, surface = points[inside], surface[inside]
    intensity = world.surface_intensity(surface)
    return np.concatenate([points, intensity[:, None]], axis=1)
