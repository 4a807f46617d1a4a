import logging
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from volumae.config import PointDecoration, PositionalEmbedding
from volumae.exceptions import ConfigurationError, EmptyInputError
from volumae.geometry import VolumeCoord, VolumeSpec
from volumae.model.embeddings import patch_position_encoding
from volumae.model.layers import Linear, Module, parameter
from volumae.numerics import Tensor, ops


logger = logging.getLogger(__name__)

VOXEL_POINT_FEATURES = 10
LEARNED_EMBEDDING_SCALE = 0.02


class VoxelTokenBatch(BaseModel):
    """Occupied cells in flat index order with their pooled point embeddings"""

    coords: np.ndarray
    features: Tensor
    points_per_voxel: List[np.ndarray]
    mask: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_tokens(self) -> int:
        return int(self.coords.shape[0])

    @property
    def visible(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def masked(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def coord(self, index: int) -> VolumeCoord:
        return VolumeCoord(*(int(i) for i in self.coords[index]))

    def with_mask(self, mask: np.ndarray) -> "VoxelTokenBatch":
        return self.model_copy(update={"mask": np.asarray(mask, dtype=bool)})


class PatchTokenBatch(BaseModel):
    """Non-overlapping patches of every view, view-major then row-major"""

    view_index: np.ndarray
    grid: Tuple[int, int]
    patch_size: int
    features: Tensor
    targets: np.ndarray
    mask: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_tokens(self) -> int:
        return int(self.view_index.shape[0])

    @property
    def n_views(self) -> int:
        return self.n_tokens // (self.grid[0] * self.grid[1])

    @property
    def visible(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def masked(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def with_mask(self, mask: np.ndarray) -> "PatchTokenBatch":
        return self.model_copy(update={"mask": np.asarray(mask, dtype=bool)})


class VoxelEmbedder(Module):
    """
    Dynamic voxel feature encoder: a per-point affine map and GELU, mean-pooled
    over the points of each cell, with no cap on the points per cell.
    """

    def __init__(self, width: int, rng: np.random.Generator) -> None:
        self.linear = Linear(VOXEL_POINT_FEATURES, width, rng)

    def __call__(self, decorations: np.ndarray) -> Tensor:
        return ops.gelu(self.linear(decorations))


class PatchEmbedder(Module):
    def __init__(
        self,
        width: int,
        n_views: int,
        grid: Tuple[int, int],
        patch_size: int,
        positional: PositionalEmbedding,
        rng: np.random.Generator,
    ) -> None:
        self.n_views = n_views
        self.grid = tuple(grid)
        self.patch_size = patch_size
        self.linear = Linear(3 * patch_size * patch_size, width, rng)
        self.view_embedding = parameter(
            rng.uniform(
                -LEARNED_EMBEDDING_SCALE, LEARNED_EMBEDDING_SCALE, size=(n_views, width)
            )
        )
        fixed = patch_position_encoding(self.grid[0], self.grid[1], width)
        if positional == PositionalEmbedding.LEARNED:
            self.position_table = parameter(
                rng.uniform(-LEARNED_EMBEDDING_SCALE, LEARNED_EMBEDDING_SCALE, size=fixed.shape)
            )
        else:
            self.position_table = Tensor(fixed)

    def position_view_embedding(self) -> Tensor:
        """(n_views * H_p * W_p, C) sum of the position and view embeddings"""

        per_view = self.grid[0] * self.grid[1]
        views = ops.gather(self.view_embedding, np.repeat(np.arange(self.n_views), per_view))
        positions = ops.gather(self.position_table, np.tile(np.arange(per_view), self.n_views))
        return views + positions

    def __call__(self, targets: np.ndarray) -> Tensor:
        return self.linear(targets) + self.position_view_embedding()


def _decorate(
    points: np.ndarray, spec: VolumeSpec, decoration: PointDecoration
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    coords, valid = spec.coords_of_points(points[:, :3])
    points, coords = points[valid], coords[valid]
    if points.shape[0] == 0:
        raise EmptyInputError("No LiDAR point falls inside the perception range")

    flat = spec.flat_index(coords)
    cells, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)

    xyz = points[:, :3]
    sums = np.zeros((cells.size, 3))
    np.add.at(sums, inverse, xyz)
    voxel_mean = sums / counts[:, None]
    centers = spec.lower + (coords + 0.5) * spec.cell

    if decoration == PointDecoration.METRIC:
        position, cell = xyz, 1.0
    else:
        # range units for positions and cell units for offsets, every entry O(1)
        position, cell = (xyz - spec.lower) / (spec.upper - spec.lower), spec.cell

    decorations = np.concatenate(
        [
            position,
            points[:, 3:4],
            (xyz - voxel_mean[inverse]) / cell,
            (xyz - centers) / cell,
        ],
        axis=1,
    )
    return decorations, cells, inverse


def voxelize_dynamic(
    points: np.ndarray,
    spec: VolumeSpec,
    embedder: VoxelEmbedder,
    decoration: PointDecoration = PointDecoration.NORMALIZED,
) -> VoxelTokenBatch:
    """
    Group in-range points by volume cell and embed each cell as the mean of
    its per-point embeddings. Points outside the range are dropped.

    Every point is decorated with 10 features: its position, its intensity,
    its offset from the mean of the points of its cell and its offset from
    the cell center. `decoration` picks the units: `METRIC` is raw meters,
    `NORMALIZED` (the default) rescales positions to [0, 1) over the range
    and offsets by the cell size.

    Raises:
        EmptyInputError: no point falls inside the range
    """

    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    decorations, cells, inverse = _decorate(points, spec, decoration)

    embedded = embedder(decorations)
    counts = np.bincount(inverse, minlength=cells.size).astype(np.float64)
    pooled = ops.scatter(embedded, inverse, cells.size) / counts[:, None]

    coords, valid = spec.coords_of_points(points[:, :3])
    kept = points[valid, :3]
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(counts.astype(np.int64))[:-1]
    points_per_voxel = np.split(kept[order], bounds)

    grid_coords = np.stack(np.unravel_index(cells, spec.grid_shape), axis=1).astype(np.int64)

    logger.debug("Voxelized %d points into %d tokens", kept.shape[0], cells.size)

    return VoxelTokenBatch(
        coords=grid_coords,
        features=pooled,
        points_per_voxel=points_per_voxel,
        mask=np.zeros(cells.size, dtype=bool),
    )


def images_to_patches(images: Sequence[np.ndarray], patch_size: int) -> np.ndarray:
    """(n_views * H_p * W_p, 3 P^2) patch targets, view-major then row-major"""

    patches = []
    for image in images:
        height, width, channels = image.shape
        if height % patch_size or width % patch_size:
            raise ConfigurationError(
                f"Patch size {patch_size} doesn't divide the image size {(height, width)}"
            )
        grid_h, grid_w = height // patch_size, width // patch_size
        blocks = image.reshape(grid_h, patch_size, grid_w, patch_size, channels)
        patches.append(
            blocks.transpose(0, 2, 1, 3, 4).reshape(
                grid_h * grid_w, patch_size * patch_size * channels
            )
        )
    return np.concatenate(patches, axis=0)


def patches_to_images(
    patches: np.ndarray, n_views: int, grid: Tuple[int, int], patch_size: int
) -> List[np.ndarray]:
    """Inverse of `images_to_patches`"""

    grid_h, grid_w = grid
    blocks = np.asarray(patches).reshape(n_views, grid_h, grid_w, patch_size, patch_size, 3)
    images = blocks.transpose(0, 1, 3, 2, 4, 5).reshape(
        n_views, grid_h * patch_size, grid_w * patch_size, 3
    )
    return list(images)


def embed_patches(
    images: Sequence[np.ndarray], patch_size: int, embedder: PatchEmbedder
) -> PatchTokenBatch:
    """
    Raises:
        ConfigurationError: the patch size doesn't divide the image size or the
            images don't match the embedder's views and grid
    """

    targets = images_to_patches(images, patch_size)
    height, width = images[0].shape[:2]
    grid = (height // patch_size, width // patch_size)
    if (
        len(images) != embedder.n_views
        or grid != embedder.grid
        or patch_size != embedder.patch_size
    ):
        raise ConfigurationError(
            f"{len(images)} views with a {grid} patch grid don't match the model "
            f"({embedder.n_views} views, {embedder.grid} grid)"
        )

    per_view = grid[0] * grid[1]
    return PatchTokenBatch(
        view_index=np.repeat(np.arange(len(images)), per_view),
        grid=grid,
        patch_size=patch_size,
        features=embedder(targets),
        targets=targets,
        mask=np.zeros(targets.shape[0], dtype=bool),
    )


def mask_count(n_tokens: int, ratio: float) -> int:
    # Decimal ratios such as 0.7 must give exactly floor(0.7 n)
    return int(Fraction(str(ratio)) * n_tokens)


def make_mask_plan(n_tokens: int, ratio: float, seed: int) -> np.ndarray:
    """
    Boolean mask with exactly floor(ratio * n_tokens) entries set, chosen
    uniformly without replacement.

    Raises:
        ConfigurationError: ratio outside [0, 1)
    """

    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"The masking ratio must lie in [0, 1), got {ratio}")

    mask = np.zeros(n_tokens, dtype=bool)
    count = mask_count(n_tokens, ratio)
    if count:
        rng = np.random.default_rng(seed)
        mask[rng.choice(n_tokens, size=count, replace=False)] = True
    return mask
