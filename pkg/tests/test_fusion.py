import numpy as np
import pytest
from pydantic import ValidationError

from volumae.checks.instances import (
    PATCH_SIZE,
    WIDTH,
    small_camera,
    small_mmim_config,
    small_sca_config,
    small_volume,
    view_grids,
)
from volumae.config import EncoderConfig
from volumae.geometry import CameraModel, VolumeSpec
from volumae.model.encoder import Encoder, encode
from volumae.model.fusion import (
    MMIM,
    SpatialCrossAttention,
    VolumeFeature,
    gather_voxel_tokens,
    mmim_fuse,
    project_volume_to_image_plane,
    scatter_lidar_to_volume,
    spatial_cross_attention,
    tokens_to_view_grids,
)
from volumae.numerics import Tensor


def random_volume(rng, spec, channels=WIDTH) -> VolumeFeature:
    return VolumeFeature(data=Tensor(rng.normal(size=(channels, *spec.grid_shape))), spec=spec)


def test_volume_feature_token_layout(rng):
    spec = small_volume()
    volume = random_volume(rng, spec)

    tokens = volume.tokens().numpy()

    coord = spec.coord_of(5)
    expected = volume.data.numpy()[:, coord.ix, coord.iy, coord.iz]
    np.testing.assert_array_equal(tokens[5], expected)
    restored = VolumeFeature.from_tokens(volume.tokens(), spec)
    np.testing.assert_array_equal(restored.data.numpy(), volume.data.numpy())


def test_volume_feature_checks_its_grid(rng):
    with pytest.raises(ValidationError):
        VolumeFeature(data=Tensor(np.zeros((WIDTH, 2, 2, 2))), spec=small_volume())


def test_view_grids_layout(rng):
    tokens = Tensor(rng.normal(size=(2 * 6, 3)))

    grids = tokens_to_view_grids(tokens, 2, (2, 3))

    assert [grid.shape for grid in grids] == [(3, 2, 3)] * 2
    np.testing.assert_array_equal(grids[1].numpy()[:, 1, 2], tokens.numpy()[6 + 5])


def test_scatter_then_gather(rng):
    spec = small_volume()
    coords = np.array([[0, 0, 0], [3, 1, 1], [2, 2, 0]])
    features = rng.normal(size=(3, WIDTH))

    volume = scatter_lidar_to_volume(Tensor(features), coords, spec)

    np.testing.assert_array_equal(gather_voxel_tokens(volume, coords).numpy(), features)
    assert np.count_nonzero(np.abs(volume.tokens().numpy()).sum(axis=1)) == 3


def test_encoder_keeps_the_token_shape(rng):
    encoder = Encoder(EncoderConfig(depth=2, width=WIDTH, heads=2, mlp_ratio=2), rng)

    assert encode(Tensor(rng.normal(size=(3, WIDTH))), encoder).shape == (3, WIDTH)
    with pytest.raises(ValueError):
        encode(Tensor(np.zeros((0, WIDTH))), encoder)


def test_encoder_is_its_blocks_only(rng):
    encoder = Encoder(EncoderConfig(depth=1, width=WIDTH, heads=2, mlp_ratio=2), rng)
    tokens = Tensor(rng.normal(size=(5, WIDTH)))

    assert not any(name.startswith("stack.norm") for name, _ in encoder.named_parameters())
    np.testing.assert_array_equal(
        encode(tokens, encoder).numpy(), encoder.stack.blocks[0](tokens).numpy()
    )


def test_empty_encoder_is_the_identity(rng):
    encoder = Encoder(EncoderConfig(depth=0, width=WIDTH, heads=2, mlp_ratio=2), rng)
    tokens = Tensor(rng.normal(size=(4, WIDTH)))

    np.testing.assert_array_equal(encode(tokens, encoder).numpy(), tokens.numpy())


def test_sca_leaves_unseen_cells_empty(rng):
    spec = small_volume()
    sca = SpatialCrossAttention(WIDTH, spec, small_sca_config(), 0, rng)
    cam = small_camera()

    plan = sca.plan([cam], PATCH_SIZE)
    lifted = spatial_cross_attention(sca, view_grids(rng), [cam], PATCH_SIZE)

    tokens = lifted.tokens().numpy()
    unseen = plan.hit_count == 0
    assert unseen.any() and (~unseen).any()
    np.testing.assert_array_equal(tokens[unseen], 0.0)
    assert np.all(np.abs(tokens[~unseen]).sum(axis=1) > 0)


def test_sca_attention_weights_are_normalized(rng):
    sca = SpatialCrossAttention(WIDTH, small_volume(), small_sca_config(), 0, rng)

    weights = sca.blocks[0].attention_weights(sca.queries()).numpy()

    assert weights.shape == (small_volume().n_cells, 2, 2, 2)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)


def test_sca_needs_a_grid_per_camera(rng):
    sca = SpatialCrossAttention(WIDTH, small_volume(), small_sca_config(), 0, rng)

    with pytest.raises(ValueError):
        spatial_cross_attention(sca, view_grids(rng, 2), [small_camera()], PATCH_SIZE)


def test_sca_is_invariant_to_duplicated_views(rng):
    spec = small_volume()
    sca = SpatialCrossAttention(WIDTH, spec, small_sca_config(), 0, rng)
    cam = small_camera()
    grids = view_grids(rng)

    single = spatial_cross_attention(sca, grids, [cam], PATCH_SIZE).data.numpy()
    double = spatial_cross_attention(sca, grids * 2, [cam, cam], PATCH_SIZE).data.numpy()

    np.testing.assert_allclose(single, double, atol=1e-10)


def test_mmim_without_blocks_is_the_identity(rng):
    spec = small_volume()
    lidar, camera = random_volume(rng, spec), random_volume(rng, spec)

    fused = mmim_fuse(lidar, camera, MMIM(WIDTH, small_mmim_config(blocks=0), rng))

    assert fused[0] is lidar and fused[1] is camera


@pytest.mark.parametrize("bev", [False, True])
def test_mmim_keeps_both_volumes(rng, bev):
    spec = small_volume().as_bev() if bev else small_volume()
    mmim = MMIM(WIDTH, small_mmim_config(blocks=2), rng)

    lidar, camera = random_volume(rng, spec), random_volume(rng, spec)
    fused_lidar, fused_camera = mmim_fuse(lidar, camera, mmim)

    assert fused_lidar.data.shape == (WIDTH, *spec.grid_shape)
    assert fused_camera.data.shape == (WIDTH, *spec.grid_shape)
    tokens = Tensor(rng.normal(size=(spec.n_cells, 2 * WIDTH)))
    weights = mmim.blocks[0].attention_weights(tokens)
    np.testing.assert_allclose(weights.numpy().sum(axis=-1), 1.0, atol=1e-12)


def test_mmim_needs_a_shared_grid(rng):
    spec = small_volume()
    mmim = MMIM(WIDTH, small_mmim_config(), rng)

    with pytest.raises(ValueError):
        mmim_fuse(random_volume(rng, spec), random_volume(rng, spec.as_bev()), mmim)


def test_back_projection_averages_cells(rng):
    spec = small_volume()
    cam = small_camera()
    constant = VolumeFeature(data=Tensor(np.full((WIDTH, *spec.grid_shape), 2.5)), spec=spec)
    grid = (cam.height // PATCH_SIZE, cam.width // PATCH_SIZE)

    patches = project_volume_to_image_plane(constant, [cam], grid, PATCH_SIZE).numpy()

    assert patches.shape == (grid[0] * grid[1], WIDTH)
    filled = np.abs(patches).sum(axis=1) > 0
    assert filled.any()
    np.testing.assert_allclose(patches[filled], 2.5, atol=1e-12)
    np.testing.assert_array_equal(patches[~filled], 0.0)


# 4 x 3 x 2 cells whose y = 0, z = 1 row sits on the axis of a camera at height 1
AXIS_VOLUME = VolumeSpec(
    x_range=(-8.0, 8.0), y_range=(-6.0, 6.0), z_range=(-2.0, 2.0), cell_size=(4.0, 4.0, 2.0)
)


def axis_camera(yaw_deg: float = 0.0) -> CameraModel:
    return CameraModel.looking_at_yaw(
        yaw_deg, (0.0, 0.0, 1.0), width=16, height=16, horizontal_fov_deg=90.0
    )


def single_cell_volume(coord) -> VolumeFeature:
    data = np.zeros((WIDTH, *AXIS_VOLUME.grid_shape))
    data[(slice(None), *coord)] = 1.0
    return VolumeFeature(data=Tensor(data), spec=AXIS_VOLUME)


def test_cell_on_the_optical_axis_fills_the_center_patch():
    cam = axis_camera()
    grid = (cam.height // PATCH_SIZE, cam.width // PATCH_SIZE)
    # center (2, 0, 1), 2 m in front of the camera
    volume = single_cell_volume((2, 1, 1))

    patches = project_volume_to_image_plane(volume, [cam], grid, PATCH_SIZE).numpy()

    # the principal point (8, 8) lies in patch row 2, column 2
    center = 2 * grid[1] + 2
    nonzero = np.flatnonzero(np.abs(patches).sum(axis=1))
    assert nonzero.tolist() == [center]
    assert np.all(patches[center] > 0)


def test_cell_behind_every_camera_contributes_nothing():
    rig = [axis_camera(0.0), axis_camera(30.0), axis_camera(-30.0)]
    grid = (4, 4)
    # center (-6, 0, 1)
    volume = single_cell_volume((0, 1, 1))

    patches = project_volume_to_image_plane(volume, rig, grid, PATCH_SIZE).numpy()

    assert patches.shape == (3 * 16, WIDTH)
    np.testing.assert_array_equal(patches, 0.0)
