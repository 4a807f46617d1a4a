from volumae.geometry.camera import (  # noqa F401
    CameraModel,
    camera_ring,
    hit_masks,
    hit_views,
    project_point,
)
from volumae.geometry.volume import (  # noqa F401
    VolumeCoord,
    VolumeSpec,
    point_to_volume_coord,
    reference_point_grid,
    reference_points,
    volume_cell_center,
)
