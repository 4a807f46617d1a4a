from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from volumae.config import DecoderConfig
from volumae.exceptions import EmptyInputError, EmptyMaskError
from volumae.model.layers import Linear, Module, TransformerStack
from volumae.numerics import Tensor, as_tensor, ops


POINT_OFFSET_BOUND = 0.5


@dataclass
class VoxelPrediction:
    offsets: Tensor
    """(N_mask, n_pts, 3) offsets from the cell center in cell units, within +-0.5"""
    occupancy_logits: Tensor
    """(N_mask + N_neg,) masked cells first, then the sampled empty cells"""

    def points(self, centers: np.ndarray, cell: np.ndarray) -> Tensor:
        """Predicted points in meters given the (N_mask, 3) centers of the masked cells"""

        return self.offsets * np.asarray(cell) + np.asarray(centers)[:, None, :]


@dataclass
class PatchPrediction:
    pixels: Tensor
    """(N_patch_total, P * P * 3)"""


class VoxelDecoder(Module):
    def __init__(self, width: int, config: DecoderConfig, rng: np.random.Generator) -> None:
        self.n_pts = config.n_pts
        self.stack = TransformerStack(
            width, config.voxel_depth, config.heads, config.mlp_ratio, rng
        )
        self.point_head = Linear(width, config.n_pts * 3, rng)
        self.occupancy_head = Linear(width, 1, rng)


class PatchDecoder(Module):
    def __init__(
        self, width: int, patch_size: int, config: DecoderConfig, rng: np.random.Generator
    ) -> None:
        self.stack = TransformerStack(
            width, config.patch_depth, config.heads, config.mlp_ratio, rng
        )
        self.pixel_head = Linear(width, 3 * patch_size * patch_size, rng)


def decode_voxels(
    masked: Tensor,
    negatives: Optional[Tensor],
    decoder: VoxelDecoder,
    positions: Optional[np.ndarray] = None,
) -> VoxelPrediction:
    """
    Decode the masked voxel tokens together with the empty-cell candidates.

    `positions` is an optional (N_mask + N_neg, C) encoding added to the
    candidates before the transformer.
    """

    n_masked = masked.shape[0]
    if n_masked < 1:
        raise EmptyMaskError("decode_voxels() needs at least one masked voxel")

    candidates = masked if negatives is None or negatives.shape[0] == 0 else ops.concat(
        [masked, negatives], axis=0
    )
    if positions is not None:
        candidates = candidates + positions

    x = decoder.stack(candidates)
    offsets = ops.tanh(decoder.point_head(x[:n_masked])) * POINT_OFFSET_BOUND
    logits = decoder.occupancy_head(x).reshape(x.shape[0])
    return VoxelPrediction(
        offsets=offsets.reshape(n_masked, decoder.n_pts, 3),
        occupancy_logits=logits,
    )


def decode_patches(
    tokens: Tensor, decoder: PatchDecoder, embeddings: Optional[Tensor] = None
) -> PatchPrediction:
    """`embeddings` are the positional and view embeddings, re-added before decoding"""

    if embeddings is not None:
        tokens = tokens + embeddings
    return PatchPrediction(pixels=decoder.pixel_head(decoder.stack(tokens)))


# Objectives


def chamfer_loss(predicted, target) -> Tensor:
    """
    Mean-reduced squared chamfer distance between two point sets:
    mean over A of the squared distance to the nearest point of B, plus the same from B.

    Raises:
        EmptyInputError: either set is empty
    """

    predicted, target = as_tensor(predicted), as_tensor(target)
    if predicted.shape[0] == 0 or target.shape[0] == 0:
        raise EmptyInputError("chamfer_loss() needs two non-empty point sets")

    n, m = predicted.shape[0], target.shape[0]
    diff = predicted.reshape(n, 1, 3) - target.reshape(1, m, 3)
    squared = (diff * diff).sum(axis=-1)
    return ops.amin(squared, axis=1).mean() + ops.amin(squared, axis=0).mean()


def masked_chamfer_loss(predicted: Tensor, targets: Sequence[np.ndarray]) -> Tensor:
    """Chamfer distance per masked voxel, averaged over the voxels"""

    if len(targets) == 0:
        raise EmptyMaskError("No masked voxel to reconstruct")
    distances = [
        chamfer_loss(predicted[index], target).reshape(1)
        for index, target in enumerate(targets)
    ]
    return ops.concat(distances, axis=0).mean()


def occupancy_loss(logits, labels) -> Tensor:
    """Mean binary cross entropy with logits: softplus(x) - y x"""

    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.shape:
        raise ValueError(f"labels {labels.shape} don't match logits {logits.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("occupancy labels must be 0 or 1")
    return (ops.softplus(logits) - logits * labels).mean()


def voxel_loss(chamfer, occupancy) -> Tensor:
    return as_tensor(chamfer) + as_tensor(occupancy)


def image_loss(
    prediction: PatchPrediction, targets: np.ndarray, mask: np.ndarray, masked_only: bool = True
) -> Tensor:
    """
    Mean squared error over the masked patches (or every patch when
    `masked_only` is off).

    Raises:
        EmptyMaskError: no patch to supervise
    """

    targets = np.asarray(targets, dtype=np.float64)
    if prediction.pixels.shape != targets.shape:
        raise ValueError(
            f"prediction {prediction.pixels.shape} doesn't match targets {targets.shape}"
        )

    rows = np.flatnonzero(mask) if masked_only else np.arange(targets.shape[0])
    if rows.size == 0:
        raise EmptyMaskError("No masked patch to reconstruct")

    diff = ops.gather(prediction.pixels, rows) - targets[rows]
    return (diff * diff).mean()


def total_loss(voxel, image, weights: Tuple[float, float] = (1.0, 1.0)) -> Tensor:
    weight_voxel, weight_image = weights
    return as_tensor(voxel) * weight_voxel + as_tensor(image) * weight_image
