from volumae.scenegen.lidar import sample_lidar  # noqa F401
from volumae.scenegen.render import render_views  # noqa F401
from volumae.scenegen.scene import (  # noqa F401
    Scene,
    cross_modal_consistency,
    generate_scene,
    load_scene,
    occupied_cells,
    save_scene,
)
from volumae.scenegen.world import LidarConfig, SceneSpec, World, sample_world  # noqa F401
