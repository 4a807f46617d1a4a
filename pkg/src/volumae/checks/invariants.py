"""Structural properties of the geometry, the tokenizer and the fusion blocks"""
import numpy as np

from volumae.config import EncoderConfig, RunConfig
from volumae.config.run_config import DESK_VOLUME, SceneConfig
from volumae.exceptions import DegenerateProjectionError
from volumae.geometry import (
    camera_ring,
    hit_views,
    point_to_volume_coord,
    project_point,
    volume_cell_center,
)
from volumae.model.encoder import Encoder, encode
from volumae.model.fusion import (
    MMIM,
    MMIMBlock,
    SpatialCrossAttention,
    VolumeFeature,
    gather_voxel_tokens,
    mmim_fuse,
    scatter_lidar_to_volume,
    spatial_cross_attention,
)
from volumae.model.tokenizer import mask_count, make_mask_plan
from volumae.numerics import Tensor, ops
from volumae.scenegen import cross_modal_consistency, generate_scene, occupied_cells
from volumae.schemas import CheckResult

from volumae.checks.instances import (
    PATCH_SIZE,
    WIDTH,
    small_camera,
    small_mmim_config,
    small_sca_config,
    small_volume,
    view_grids,
)


EXACT = 1e-12
EQUIVARIANCE_TOLERANCE = 1e-10
ROUND_TRIP_TOLERANCE = 1e-9
MASK_RATIOS = (0.70, 0.75)
MIN_CONSISTENCY = 0.95
MIN_OCCUPIED_CELLS = 50


def check_softmax_normalization(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    logits = [rng.normal(scale=scale, size=(6, 7)) for scale in (1.0, 30.0, 300.0)]
    logits.append(np.full((2, 3), 1000.0))
    error = max(
        float(np.max(np.abs(ops.softmax(x, axis=axis).numpy().sum(axis=axis) - 1.0)))
        for x in logits
        for axis in (0, 1)
    )
    return CheckResult.at_most("softmax_normalization", error, EXACT)


def check_sampling_exactness(config: RunConfig) -> CheckResult:
    """Exact at nodes, linear between neighbours, zero far outside"""

    rng = np.random.default_rng(config.seed)
    grid = rng.normal(size=(3, 4, 5))
    volume = rng.normal(size=(3, 3, 3, 2))

    errors = [
        np.abs(ops.sample_bilinear_2d(grid, [[3.0, 2.0]]).numpy()[0] - grid[:, 2, 3]),
        np.abs(
            ops.sample_bilinear_2d(grid, [[1.5, 2.0]]).numpy()[0]
            - (grid[:, 2, 1] + grid[:, 2, 2]) / 2
        ),
        np.abs(ops.sample_bilinear_2d(grid, [[-10.0, -10.0]]).numpy()[0]),
        np.abs(
            ops.sample_trilinear_3d(volume, [[1.0, 2.0, 1.0]]).numpy()[0] - volume[:, 1, 2, 1]
        ),
        np.abs(
            ops.sample_trilinear_3d(volume, [[0.0, 1.0, 0.5]]).numpy()[0]
            - (volume[:, 0, 1, 0] + volume[:, 0, 1, 1]) / 2
        ),
        np.abs(ops.sample_trilinear_3d(volume, [[-5.0, 9.0, 4.0]]).numpy()[0]),
    ]
    return CheckResult.at_most("sampling_exactness", float(max(e.max() for e in errors)), EXACT)


def check_projection_round_trip(config: RunConfig) -> CheckResult:
    """Unproject random pixels at random depths, project, unproject again"""

    rng = np.random.default_rng(config.seed)
    rig = camera_ring(6, 1.6, (64, 176), horizontal_fov_deg=70.0)
    error = 0.0
    for _ in range(1000):
        cam = rig[rng.integers(len(rig))]
        point = cam.unproject(
            rng.uniform(0, cam.width), rng.uniform(0, cam.height), rng.uniform(1.0, 50.0)
        )
        u, v, depth = project_point(cam, point)
        error = max(error, float(np.max(np.abs(cam.unproject(u, v, depth) - point))))
    return CheckResult.at_most("projection_round_trip", error, ROUND_TRIP_TOLERANCE)


def check_hit_views(config: RunConfig) -> CheckResult:
    """Frustum membership against a brute force over a random cloud"""

    rng = np.random.default_rng(config.seed)
    rig = camera_ring(6, 1.6, (64, 176), horizontal_fov_deg=70.0)
    points = rng.uniform([-50, -50, -5], [50, 50, 3], size=(1000, 3))

    mismatches = 0
    for point in points:
        expected = set()
        for index, cam in enumerate(rig):
            try:
                u, v, depth = project_point(cam, point)
            except DegenerateProjectionError:
                continue
            if depth > 1e-6 and 0 <= u < cam.width and 0 <= v < cam.height:
                expected.add(index)
        mismatches += hit_views(rig, point) != expected
    return CheckResult.at_most("hit_views_brute_force", mismatches, 0)


def check_volume_partition(config: RunConfig) -> CheckResult:
    """Every in-range point falls in one cell, centers map back to their cell"""

    rng = np.random.default_rng(config.seed)
    spec = config.volume
    violations = 0

    points = rng.uniform(spec.lower, spec.upper, size=(1000, 3))
    for point in points:
        coord = point_to_volume_coord(spec, point)
        if coord is None:
            violations += 1
            continue
        low = spec.lower + np.asarray(coord) * spec.cell
        violations += not np.all((low <= point) & (point < low + spec.cell))

    for index in range(spec.n_cells):
        coord = spec.coord_of(index)
        center = volume_cell_center(spec, coord)
        violations += point_to_volume_coord(spec, center) != coord
        for axis in range(3):
            if coord[axis] + 1 < spec.grid_shape[axis]:
                neighbour = list(coord)
                neighbour[axis] += 1
                step = volume_cell_center(spec, type(coord)(*neighbour)) - center
                expected = np.zeros(3)
                expected[axis] = spec.cell[axis]
                violations += not np.allclose(step, expected, rtol=0, atol=1e-9)

    return CheckResult.at_most("volume_partition", violations, 0)


def check_mask_counts(config: RunConfig) -> CheckResult:
    violations = 0
    for ratio in MASK_RATIOS + (config.mask_ratio_lidar, config.mask_ratio_camera):
        for n in range(1, 201):
            plan = make_mask_plan(n, ratio, config.seed + n)
            violations += int(plan.sum()) != mask_count(n, ratio)
            violations += not np.array_equal(plan, make_mask_plan(n, ratio, config.seed + n))
    violations += make_mask_plan(100, 0.75, config.seed).sum() != 75
    return CheckResult.at_most("mask_counts", violations, 0)


def check_encoder_permutation(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    encoder = Encoder(EncoderConfig(depth=2, width=WIDTH, heads=2, mlp_ratio=2), rng)
    tokens = rng.normal(size=(7, WIDTH))
    order = rng.permutation(7)
    error = np.max(
        np.abs(
            encode(Tensor(tokens[order]), encoder).numpy()
            - encode(Tensor(tokens), encoder).numpy()[order]
        )
    )
    return CheckResult.at_most("encoder_permutation", float(error), EQUIVARIANCE_TOLERANCE)


def check_sca_view_duplication(config: RunConfig) -> CheckResult:
    """Cloning a camera and its features leaves the lifted volume unchanged"""

    rng = np.random.default_rng(config.seed)
    spec = small_volume()
    sca = SpatialCrossAttention(WIDTH, spec, small_sca_config(), config.seed, rng)
    cam = small_camera()
    grids = view_grids(rng)

    single = spatial_cross_attention(sca, grids, [cam], PATCH_SIZE).data.numpy()
    double = spatial_cross_attention(sca, grids * 2, [cam, cam], PATCH_SIZE).data.numpy()
    return CheckResult.at_most(
        "sca_view_duplication", float(np.max(np.abs(single - double))), EQUIVARIANCE_TOLERANCE
    )


def check_sca_degenerate(config: RunConfig) -> CheckResult:
    """One reference point, one sampling point, zero offsets and identity maps"""

    rng = np.random.default_rng(config.seed)
    spec = small_volume()
    sca = SpatialCrossAttention(
        WIDTH, spec, small_sca_config(n_ref=1, points=1), config.seed, rng
    )
    block = sca.blocks[0]
    block.value.set_identity()
    block.output.set_identity()
    cam = small_camera()
    grids = view_grids(rng)

    plan = sca.plan([cam], PATCH_SIZE)
    attended = block.attend(sca.queries(), grids, plan).numpy()
    view = plan.views[0]
    expected = np.zeros_like(attended)
    expected[view.cells] = ops.sample_bilinear_2d(grids[0], view.location[:, 0]).numpy()

    return CheckResult.at_most(
        "sca_degenerate_reduction",
        float(np.max(np.abs(attended - expected))),
        EXACT,
        detail=f"{view.cells.size} of {spec.n_cells} cells seen",
    )


def _random_volumes(rng: np.random.Generator, spec):
    return [
        VolumeFeature(data=Tensor(rng.normal(size=(WIDTH, *spec.grid_shape))), spec=spec)
        for _ in range(2)
    ]


def check_mmim_normalization(config: RunConfig) -> CheckResult:
    """Interaction weights sum to one, in the 3D volume and in BEV"""

    rng = np.random.default_rng(config.seed)
    error = 0.0
    for spec in (small_volume(), small_volume().as_bev()):
        mmim = MMIM(WIDTH, small_mmim_config(blocks=2), rng)
        tokens = Tensor(rng.normal(size=(spec.n_cells, 2 * WIDTH)))
        for block in mmim.blocks:
            sums = block.attention_weights(tokens).numpy().sum(axis=-1)
            error = max(error, float(np.max(np.abs(sums - 1.0))))
        # the full module must run on both grids
        mmim_fuse(*_random_volumes(rng, spec), mmim)
    return CheckResult.at_most("mmim_weight_normalization", error, EXACT)


def check_mmim_identity(config: RunConfig) -> CheckResult:
    """No blocks returns the inputs; the degenerate block returns its queries"""

    rng = np.random.default_rng(config.seed)
    spec = small_volume()
    lidar, camera = _random_volumes(rng, spec)

    fused = mmim_fuse(lidar, camera, MMIM(WIDTH, small_mmim_config(blocks=0), rng))
    error = max(
        float(np.max(np.abs(fused[0].data.numpy() - lidar.data.numpy()))),
        float(np.max(np.abs(fused[1].data.numpy() - camera.data.numpy()))),
    )

    block = MMIMBlock(2 * WIDTH, small_mmim_config(points=1), rng)
    block.value.set_identity()
    block.output.set_identity()
    block.mlp.set_zero()
    tokens = ops.concat([lidar.tokens(), camera.tokens()], axis=1)
    attended = block.attend(tokens, spec).numpy()
    error = max(error, float(np.max(np.abs(attended - tokens.numpy()))))
    return CheckResult.at_most("mmim_identity", error, EXACT)


def check_scatter_gather(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    spec = config.volume
    n = min(spec.n_cells, 12)
    flat = np.sort(rng.choice(spec.n_cells, size=n, replace=False))
    coords = np.stack(np.unravel_index(flat, spec.grid_shape), axis=1)
    features = rng.normal(size=(n, WIDTH))

    volume = scatter_lidar_to_volume(Tensor(features), coords, spec)
    gathered = gather_voxel_tokens(volume, coords).numpy()
    nonzero = int(np.count_nonzero(np.abs(volume.data.numpy()).sum(axis=0)))
    mismatches = int(not np.array_equal(gathered, features)) + int(nonzero != n)
    return CheckResult.at_most("scatter_gather_inverse", mismatches, 0)


def check_scene_consistency(config: RunConfig) -> CheckResult:
    scene = generate_scene(config.scenes.scene_spec(config.seed, config.volume))
    fraction = cross_modal_consistency(scene)
    return CheckResult.at_least("scene_cross_modal_consistency", fraction, MIN_CONSISTENCY)


def check_scene_coverage(config: RunConfig) -> CheckResult:
    """The default desk scene occupies enough cells to train on"""

    scene = generate_scene(SceneConfig().scene_spec(config.seed, DESK_VOLUME))
    return CheckResult.at_least(
        "scene_coverage", occupied_cells(scene, DESK_VOLUME), MIN_OCCUPIED_CELLS
    )
