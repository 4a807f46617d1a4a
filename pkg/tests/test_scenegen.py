import json
from pathlib import Path

import numpy as np
import pytest

from volumae.config import RunConfig
from volumae.config.run_config import DESK_VOLUME
from volumae.exceptions import SceneFormatError
from volumae.scenegen import (
    LidarConfig,
    SceneSpec,
    cross_modal_consistency,
    generate_scene,
    load_scene,
    occupied_cells,
    sample_world,
    save_scene,
)


def test_scene_is_a_function_of_its_seed(tiny_config: RunConfig):
    spec = tiny_config.scenes.scene_spec(7, tiny_config.volume)

    first, second = generate_scene(spec), generate_scene(spec)

    np.testing.assert_array_equal(first.points, second.points)
    for a, b in zip(first.images, second.images):
        np.testing.assert_array_equal(a, b)


def test_seeds_give_different_worlds(tiny_config: RunConfig):
    first = sample_world(tiny_config.scenes.scene_spec(0, tiny_config.volume))
    second = sample_world(tiny_config.scenes.scene_spec(1, tiny_config.volume))

    assert not np.array_equal(first.centers, second.centers)


def test_scene_contents(tiny_scene, tiny_config: RunConfig):
    spec = tiny_config.volume

    assert tiny_scene.points.shape[1] == 4
    assert np.all(spec.contains(tiny_scene.points[:, :3]))
    assert np.all((tiny_scene.points[:, 3] >= 0) & (tiny_scene.points[:, 3] <= 1))

    assert tiny_scene.n_views == tiny_config.scenes.n_views
    for image in tiny_scene.images:
        assert image.shape == (*tiny_config.scenes.image_size, 3)
        assert image.min() >= 0.0 and image.max() <= 1.0


def test_boxes_keep_away_from_the_sensor():
    spec = SceneSpec(seed=3, n_boxes=20)

    world = sample_world(spec)

    distances = np.hypot(world.centers[:, 0], world.centers[:, 1])
    radii = np.hypot(world.sizes[:, 0], world.sizes[:, 1]) / 2
    assert np.all(distances >= spec.min_distance + radii)
    np.testing.assert_allclose(world.centers[:, 2] - world.sizes[:, 2] / 2, spec.ground_height)


def test_placement_outside_the_range_is_rejected():
    with pytest.raises(ValueError):
        SceneSpec(placement_range=60.0)


def test_lidar_directions_are_unit_vectors():
    directions = LidarConfig(azimuth_steps=12, n_rings=3).directions()

    assert directions.shape == (36, 3)
    np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)


def test_save_and_load(tiny_scene, tmp_path: Path):
    path = save_scene(tiny_scene, tmp_path / "scene_0.json")

    loaded = load_scene(path)

    assert loaded.seed == tiny_scene.seed
    np.testing.assert_array_equal(loaded.points, tiny_scene.points)
    for a, b in zip(loaded.images, tiny_scene.images):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(loaded.cameras, tiny_scene.cameras):
        np.testing.assert_array_equal(a.projection, b.projection)


def test_load_rejects_malformed_files(tmp_path: Path):
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(SceneFormatError):
        load_scene(broken)

    with pytest.raises(SceneFormatError):
        load_scene(tmp_path / "missing.json")


def test_load_rejects_images_not_matching_cameras(tiny_scene, tmp_path: Path):
    data = tiny_scene.to_json_dict()
    data["images"] = data["images"][:1]
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(data), encoding="utf-8")

    with pytest.raises(SceneFormatError) as exc:
        load_scene(path)
    assert str(path) in str(exc.value)


def test_cross_modal_consistency(tiny_scene):
    assert cross_modal_consistency(tiny_scene) >= 0.95


@pytest.mark.parametrize("seed", range(5))
def test_desk_scenes_are_consistent(seed: int):
    scene = generate_scene(SceneSpec(seed=seed, volume=DESK_VOLUME))

    assert cross_modal_consistency(scene) >= 0.95


@pytest.fixture
def desk_scene():
    return generate_scene(SceneSpec(seed=0, volume=DESK_VOLUME))


def test_shuffled_depth_maps_are_inconsistent(desk_scene, rng: np.random.Generator):
    shuffled = [
        rng.permutation(depth.ravel()).reshape(depth.shape) for depth in desk_scene.depths
    ]
    corrupted = desk_scene.model_copy(update={"depths": shuffled})

    assert cross_modal_consistency(corrupted) < 0.95


@pytest.mark.parametrize("offset", [0.3, -0.3, 1.0])
def test_shifted_depth_maps_are_inconsistent(desk_scene, offset: float):
    shifted = [depth + offset for depth in desk_scene.depths]
    corrupted = desk_scene.model_copy(update={"depths": shifted})

    assert cross_modal_consistency(corrupted) < 0.95


def test_depth_maps_one_row_off_are_inconsistent(desk_scene):
    rolled = [np.roll(depth, 1, axis=0) for depth in desk_scene.depths]
    corrupted = desk_scene.model_copy(update={"depths": rolled})

    assert cross_modal_consistency(corrupted) < 0.95


def test_consistency_needs_a_generated_scene(tiny_scene, tmp_path: Path):
    loaded = load_scene(save_scene(tiny_scene, tmp_path / "scene_0.json"))

    with pytest.raises(ValueError):
        cross_modal_consistency(loaded)


def test_desk_scene_coverage():
    spec = SceneSpec(seed=0, volume=DESK_VOLUME)

    assert occupied_cells(generate_scene(spec), DESK_VOLUME) >= 50
