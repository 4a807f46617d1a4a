import json
from pathlib import Path

import numpy as np
import pytest

from volumae.config import RunConfig
from volumae.model import StepSeeds, VolumaeModel
from volumae.model.tokenizer import patches_to_images
from volumae.numerics import no_grad
from volumae.scenegen import Scene
from volumae.training.artifacts import (
    PREDICTED_POINTS_FILE,
    TARGET_POINTS_FILE,
    dump_reconstruction,
    read_ppm,
    write_ppm,
)


def test_ppm_round_trip(tmp_path: Path, rng):
    image = rng.uniform(size=(4, 6, 3))

    path = write_ppm(tmp_path / "image.ppm", image)

    assert path.read_bytes().startswith(b"P6\n6 4\n255\n")
    pixels = read_ppm(path)
    assert pixels.shape == (4, 6, 3)
    np.testing.assert_array_equal(pixels, np.round(image * 255).astype(np.uint8))


def test_ppm_clips_out_of_range_pixels(tmp_path: Path):
    image = np.array([[[-0.5, 0.5, 1.5]]])

    pixels = read_ppm(write_ppm(tmp_path / "image.ppm", image))

    np.testing.assert_array_equal(pixels[0, 0], [0, 128, 255])


def test_read_ppm_rejects_other_formats(tmp_path: Path):
    path = tmp_path / "image.ppm"
    path.write_bytes(b"P3\n1 1\n255\n0 0 0")

    with pytest.raises(ValueError):
        read_ppm(path)


def test_dump_reconstruction(tiny_config: RunConfig, tiny_scene: Scene, tmp_path: Path):
    model = VolumaeModel(tiny_config)
    seeds = StepSeeds.derive(0, 0)

    artifacts = dump_reconstruction(model, tiny_scene, tmp_path / "recon", seeds)

    n_views = tiny_config.scenes.n_views
    assert len(artifacts.images) == 3 * n_views
    assert sorted(path.name for path in artifacts.images) == sorted(
        f"view{view}_{kind}.ppm"
        for view in range(n_views)
        for kind in ("original", "masked", "recon")
    )
    assert artifacts.predicted_points.name == PREDICTED_POINTS_FILE
    assert artifacts.target_points.name == TARGET_POINTS_FILE

    with no_grad():
        result = model.forward(tiny_scene, seeds)
    patches = result.patches
    rows = np.repeat(patches.mask[:, None], patches.targets.shape[1], axis=1).astype(float)
    masked_pixels = patches_to_images(rows, n_views, patches.grid, patches.patch_size)

    for view in range(n_views):
        hidden = masked_pixels[view] > 0.5
        original = read_ppm(tmp_path / "recon" / f"view{view}_original.ppm")
        masked = read_ppm(tmp_path / "recon" / f"view{view}_masked.ppm")
        recon = read_ppm(tmp_path / "recon" / f"view{view}_recon.ppm")

        assert original.shape == (*tiny_config.scenes.image_size, 3)
        np.testing.assert_array_equal(masked[hidden], 0)
        np.testing.assert_array_equal(masked[~hidden], original[~hidden])
        np.testing.assert_array_equal(recon[~hidden], original[~hidden])

    predicted = json.loads(artifacts.predicted_points.read_text(encoding="utf-8"))
    n_masked = int(result.voxels.mask.sum())
    assert len(predicted) == n_masked * tiny_config.decoder.n_pts
    assert all(len(point) == 3 for point in predicted)


def test_dump_reconstruction_is_reproducible(
    tiny_config: RunConfig, tiny_scene: Scene, tmp_path: Path
):
    model = VolumaeModel(tiny_config)
    seeds = StepSeeds.derive(0, 1)

    first = dump_reconstruction(model, tiny_scene, tmp_path / "first", seeds)
    second = dump_reconstruction(model, tiny_scene, tmp_path / "second", seeds)

    first_files = first.images + [first.predicted_points, first.target_points]
    second_files = second.images + [second.predicted_points, second.target_points]
    for a, b in zip(first_files, second_files):
        assert a.read_bytes() == b.read_bytes()
