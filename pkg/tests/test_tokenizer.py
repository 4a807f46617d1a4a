import numpy as np
import pytest

from volumae.config import PointDecoration, PositionalEmbedding, TokenizerConfig
from volumae.exceptions import ConfigurationError, EmptyInputError
from volumae.geometry import VolumeSpec
from volumae.model.embeddings import (
    cell_position_encoding,
    patch_position_encoding,
    sinusoidal_encoding,
)
from volumae.model.tokenizer import (
    PatchEmbedder,
    VoxelEmbedder,
    embed_patches,
    images_to_patches,
    make_mask_plan,
    mask_count,
    patches_to_images,
    voxelize_dynamic,
)


WIDTH = 8


@pytest.fixture
def spec() -> VolumeSpec:
    return VolumeSpec(
        x_range=(-4.0, 4.0), y_range=(-4.0, 4.0), z_range=(-1.0, 1.0), cell_size=(2.0, 2.0, 1.0)
    )


def random_points(rng, spec: VolumeSpec, n: int) -> np.ndarray:
    xyz = rng.uniform(spec.lower, spec.upper, size=(n, 3))
    return np.concatenate([xyz, rng.uniform(size=(n, 1))], axis=1)


def test_voxelize_groups_points_by_cell(rng, spec: VolumeSpec):
    points = random_points(rng, spec, 200)

    batch = voxelize_dynamic(points, spec, VoxelEmbedder(WIDTH, rng))

    coords, _ = spec.coords_of_points(points[:, :3])
    occupied = np.unique(spec.flat_index(coords))
    assert batch.n_tokens == occupied.size
    np.testing.assert_array_equal(spec.flat_index(batch.coords), occupied)
    assert batch.features.shape == (occupied.size, WIDTH)
    assert sum(len(group) for group in batch.points_per_voxel) == 200
    for index, group in enumerate(batch.points_per_voxel):
        group_coords, _ = spec.coords_of_points(group)
        assert np.all(group_coords == batch.coords[index])
    assert not batch.mask.any()


def test_voxelize_has_no_cap_on_points_per_cell(rng, spec: VolumeSpec):
    points = np.tile([[0.5, 0.5, 0.5, 1.0]], (1000, 1))
    points[:, :3] += rng.uniform(0.0, 0.4, size=(1000, 3))

    batch = voxelize_dynamic(points, spec, VoxelEmbedder(WIDTH, rng))

    assert batch.n_tokens == 1
    assert len(batch.points_per_voxel[0]) == 1000


def test_voxelize_drops_points_out_of_range(rng, spec: VolumeSpec):
    points = np.array([[0.5, 0.5, 0.5, 1.0], [100.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.5]])

    batch = voxelize_dynamic(points, spec, VoxelEmbedder(WIDTH, rng))

    assert batch.n_tokens == 1
    assert len(batch.points_per_voxel[0]) == 1


def test_voxelize_needs_points_in_range(rng, spec: VolumeSpec):
    with pytest.raises(EmptyInputError):
        voxelize_dynamic(np.array([[50.0, 0.0, 0.0, 1.0]]), spec, VoxelEmbedder(WIDTH, rng))


def test_voxel_embedding_is_the_mean_of_point_embeddings(rng, spec: VolumeSpec):
    embedder = VoxelEmbedder(WIDTH, rng)
    points = np.array([[0.2, 0.3, 0.1, 0.5], [1.5, 1.1, 0.7, 0.9]])
    swapped = points[::-1].copy()

    first = voxelize_dynamic(points, spec, embedder).features.numpy()
    second = voxelize_dynamic(swapped, spec, embedder).features.numpy()

    np.testing.assert_allclose(first, second, atol=1e-14)


@pytest.mark.parametrize(
    "decoration, expected",
    [
        (PointDecoration.METRIC, [0.5, 0.5, 0.5, 0.7, 0.0, 0.0, 0.0, -0.5, -0.5, 0.0]),
        (
            PointDecoration.NORMALIZED,
            [0.5625, 0.5625, 0.75, 0.7, 0.0, 0.0, 0.0, -0.25, -0.25, 0.0],
        ),
    ],
)
def test_point_decoration(rng, spec: VolumeSpec, decoration, expected):
    embedder = VoxelEmbedder(WIDTH, rng)
    # cell center (1, 1, 0.5)
    point = np.array([[0.5, 0.5, 0.5, 0.7]])

    batch = voxelize_dynamic(point, spec, embedder, decoration)

    np.testing.assert_allclose(
        batch.features.numpy(), embedder(np.array([expected])).numpy(), atol=1e-14
    )


def test_point_decoration_setting():
    assert TokenizerConfig().point_decoration == PointDecoration.NORMALIZED
    assert TokenizerConfig(point_decoration="metric").point_decoration == PointDecoration.METRIC


@pytest.mark.parametrize(
    "n, ratio, expected",
    [(10, 0.7, 7), (4, 0.75, 3), (100, 0.75, 75), (3, 0.7, 2), (1, 0.7, 0), (7, 0.0, 0)],
)
def test_mask_count_is_floored(n, ratio, expected):
    assert mask_count(n, ratio) == expected


def test_mask_plan(rng):
    plan = make_mask_plan(40, 0.7, seed=5)

    assert plan.dtype == bool
    assert plan.sum() == 28
    np.testing.assert_array_equal(plan, make_mask_plan(40, 0.7, seed=5))
    assert not np.array_equal(plan, make_mask_plan(40, 0.7, seed=6))


@pytest.mark.parametrize("ratio", [1.0, -0.1])
def test_mask_plan_rejects_ratios(ratio):
    with pytest.raises(ConfigurationError):
        make_mask_plan(10, ratio, seed=0)


def test_patch_order(rng):
    images = [rng.uniform(size=(8, 12, 3)) for _ in range(2)]

    patches = images_to_patches(images, 4)

    assert patches.shape == (2 * 2 * 3, 48)
    np.testing.assert_array_equal(patches[0], images[0][:4, :4].reshape(-1))
    np.testing.assert_array_equal(patches[1], images[0][:4, 4:8].reshape(-1))
    np.testing.assert_array_equal(patches[6], images[1][:4, :4].reshape(-1))

    restored = patches_to_images(patches, 2, (2, 3), 4)
    for original, image in zip(images, restored):
        np.testing.assert_array_equal(original, image)


def test_patch_size_must_divide_the_image(rng):
    with pytest.raises(ConfigurationError):
        images_to_patches([rng.uniform(size=(8, 10, 3))], 4)


def test_embed_patches(rng):
    embedder = PatchEmbedder(WIDTH, 2, (2, 3), 4, PositionalEmbedding.SINUSOIDAL, rng)
    images = [rng.uniform(size=(8, 12, 3)) for _ in range(2)]

    batch = embed_patches(images, 4, embedder)

    assert batch.n_tokens == 12
    assert batch.n_views == 2
    np.testing.assert_array_equal(batch.view_index, [0] * 6 + [1] * 6)
    assert batch.features.shape == (12, WIDTH)
    assert {name for name, _ in embedder.named_parameters()} == {
        "linear.weight",
        "linear.bias",
        "view_embedding",
    }


def test_embed_patches_rejects_another_rig(rng):
    embedder = PatchEmbedder(WIDTH, 2, (2, 3), 4, PositionalEmbedding.SINUSOIDAL, rng)

    with pytest.raises(ConfigurationError):
        embed_patches([rng.uniform(size=(8, 12, 3))], 4, embedder)


def test_learned_positions_are_parameters(rng):
    embedder = PatchEmbedder(WIDTH, 1, (2, 2), 4, PositionalEmbedding.LEARNED, rng)

    names = {name for name, _ in embedder.named_parameters()}

    assert "position_table" in names


def test_sinusoidal_encoding():
    encoding = sinusoidal_encoding(np.array([0.0, 1.0]), 4)

    np.testing.assert_allclose(encoding[0], [0.0, 1.0, 0.0, 1.0])
    np.testing.assert_allclose(encoding[1, :2], [np.sin(1.0), np.cos(1.0)])
    assert patch_position_encoding(2, 3, 8).shape == (6, 8)
    assert cell_position_encoding(np.zeros((5, 3)), 9).shape == (5, 9)
