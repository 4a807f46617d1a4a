import math

import numpy as np
import pytest

from volumae.checks.oracles import brute_force_chamfer
from volumae.config import DecoderConfig
from volumae.exceptions import EmptyInputError, EmptyMaskError
from volumae.model.reconstruct import (
    PatchDecoder,
    PatchPrediction,
    VoxelDecoder,
    chamfer_loss,
    decode_patches,
    decode_voxels,
    image_loss,
    masked_chamfer_loss,
    occupancy_loss,
    total_loss,
    voxel_loss,
)
from volumae.numerics import Tensor


WIDTH = 8


@pytest.fixture
def decoder_config() -> DecoderConfig:
    return DecoderConfig(voxel_depth=1, patch_depth=1, heads=2, mlp_ratio=2, n_pts=5)


def test_chamfer_of_identical_sets_is_zero(rng):
    points = rng.normal(size=(10, 3))

    assert chamfer_loss(points, points).item() == 0.0


def test_chamfer_single_points():
    assert chamfer_loss([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]).item() == 2.0


def test_chamfer_is_symmetric_and_matches_brute_force(rng):
    for _ in range(20):
        a = rng.normal(size=(rng.integers(1, 20), 3))
        b = rng.normal(size=(rng.integers(1, 20), 3))

        forward, backward = chamfer_loss(a, b).item(), chamfer_loss(b, a).item()

        assert forward == pytest.approx(backward, rel=1e-14)
        assert forward == pytest.approx(brute_force_chamfer(a, b), rel=1e-12)


def test_chamfer_needs_points():
    with pytest.raises(EmptyInputError):
        chamfer_loss(np.zeros((0, 3)), np.zeros((2, 3)))


def test_masked_chamfer_averages_voxels():
    predicted = Tensor(np.zeros((2, 1, 3)))
    targets = [np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 2.0, 0.0]])]

    assert masked_chamfer_loss(predicted, targets).item() == pytest.approx((2.0 + 8.0) / 2)
    with pytest.raises(EmptyMaskError):
        masked_chamfer_loss(predicted, [])


def test_occupancy_loss():
    assert occupancy_loss([0.0, 0.0], [1.0, 0.0]).item() == pytest.approx(math.log(2.0))
    assert occupancy_loss([50.0, -50.0], [1.0, 0.0]).item() == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        occupancy_loss([0.0], [0.5])
    with pytest.raises(ValueError):
        occupancy_loss([0.0, 1.0], [1.0])


def test_image_loss_masked_and_full(rng):
    targets = rng.uniform(size=(4, 12))
    predicted = targets.copy()
    predicted[0] += 0.2
    predicted[3] += 0.4
    mask = np.array([True, True, False, False])
    prediction = PatchPrediction(pixels=Tensor(predicted))

    assert image_loss(prediction, targets, mask).item() == pytest.approx(0.04 / 2)
    assert image_loss(prediction, targets, mask, masked_only=False).item() == pytest.approx(
        (0.04 + 0.16) / 4
    )


def test_image_loss_needs_masked_patches(rng):
    targets = rng.uniform(size=(2, 12))

    with pytest.raises(EmptyMaskError):
        image_loss(PatchPrediction(pixels=Tensor(targets)), targets, np.zeros(2, dtype=bool))


def test_loss_combinations():
    assert voxel_loss(1.5, 0.5).item() == 2.0
    assert total_loss(2.0, 0.5).item() == 2.5
    assert total_loss(2.0, 0.5, (0.0, 1.0)).item() == 0.5


def test_decode_voxels(rng, decoder_config: DecoderConfig):
    decoder = VoxelDecoder(WIDTH, decoder_config, rng)

    prediction = decode_voxels(
        Tensor(rng.normal(size=(3, WIDTH))), Tensor(rng.normal(size=(2, WIDTH))), decoder
    )

    assert prediction.offsets.shape == (3, 5, 3)
    assert prediction.occupancy_logits.shape == (5,)
    assert np.all(np.abs(prediction.offsets.numpy()) <= 0.5)

    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 2.0]])
    cell = np.array([4.0, 4.0, 2.0])
    points = prediction.points(centers, cell).numpy()
    assert np.all(np.abs(points - centers[:, None, :]) <= cell / 2)


def test_decode_voxels_without_negatives(rng, decoder_config: DecoderConfig):
    decoder = VoxelDecoder(WIDTH, decoder_config, rng)

    prediction = decode_voxels(Tensor(rng.normal(size=(2, WIDTH))), None, decoder)

    assert prediction.occupancy_logits.shape == (2,)
    with pytest.raises(EmptyMaskError):
        decode_voxels(Tensor(np.zeros((0, WIDTH))), None, decoder)


def test_decode_patches(rng, decoder_config: DecoderConfig):
    decoder = PatchDecoder(WIDTH, 4, decoder_config, rng)
    tokens = Tensor(rng.normal(size=(6, WIDTH)))

    prediction = decode_patches(tokens, decoder)

    assert prediction.pixels.shape == (6, 48)
