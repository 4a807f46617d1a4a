"""
Lifting both branches into the shared volume, fusing them there and
projecting the fused volume back onto voxel and patch tokens.

Volume features are laid out as (C, H, W, Z); internally the attention
blocks work on the equivalent (H * W * Z, C) token matrix in flat index order.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from volumae.config import MMIMConfig, SCAConfig
from volumae.geometry import CameraModel, VolumeSpec, reference_point_grid
from volumae.model.embeddings import cell_position_encoding
from volumae.model.layers import MLP, LayerNorm, Linear, Module, parameter
from volumae.numerics import Tensor, ops


# Feature-grid location given to reference points a view doesn't see;
# far enough out that zero padding removes every bilinear neighbour
OUTSIDE_LOCATION = -10.0
QUERY_EMBEDDING_SCALE = 0.02


class VolumeFeature(BaseModel):
    data: Tensor
    spec: VolumeSpec

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def check_shape(self) -> "VolumeFeature":
        if self.data.ndim != 4 or tuple(self.data.shape[1:]) != tuple(self.spec.grid_shape):
            raise ValueError(
                f"feature shape {self.data.shape} doesn't match the grid {self.spec.grid_shape}"
            )
        return self

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    def tokens(self) -> Tensor:
        """(H * W * Z, C) view of the features in flat cell order"""

        return self.data.reshape(self.channels, self.spec.n_cells).transpose()

    @classmethod
    def from_tokens(cls, tokens: Tensor, spec: VolumeSpec) -> "VolumeFeature":
        channels = tokens.shape[1]
        return cls(data=tokens.transpose().reshape(channels, *spec.grid_shape), spec=spec)


def cell_index_grid(spec: VolumeSpec) -> np.ndarray:
    """(n_cells, 3) integer coordinates of every cell, flat index order"""

    return np.stack(np.unravel_index(np.arange(spec.n_cells), spec.grid_shape), axis=1)


def tokens_to_view_grids(
    tokens: Tensor, n_views: int, grid: Tuple[int, int]
) -> List[Tensor]:
    """Split (n_views * H_p * W_p, C) patch tokens into per-view (C, H_p, W_p) grids"""

    per_view = grid[0] * grid[1]
    channels = tokens.shape[1]
    return [
        tokens[view * per_view : (view + 1) * per_view].transpose().reshape(channels, *grid)
        for view in range(n_views)
    ]


# LiDAR branch


def scatter_lidar_to_volume(
    features: Tensor, coords: np.ndarray, spec: VolumeSpec
) -> VolumeFeature:
    """Write each encoded voxel token at its own cell; every other cell is zero"""

    flat = spec.flat_index(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
    return VolumeFeature.from_tokens(ops.scatter(features, flat, spec.n_cells), spec)


def gather_voxel_tokens(volume: VolumeFeature, coords: np.ndarray) -> Tensor:
    """Exact cell lookup, (N, C) for N coordinates"""

    flat = volume.spec.flat_index(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
    return ops.gather(volume.tokens(), flat)


# Camera branch: spatial cross-attention


@dataclass
class ViewSampling:
    cells: np.ndarray
    """Cells with at least one reference point inside the view"""
    location: np.ndarray
    """(n_cells_in_view, n_ref, 2) feature-grid (u, v) of the reference points"""
    hit: np.ndarray
    """(n_cells_in_view, n_ref) 1.0 where the reference point is inside the view"""


@dataclass
class SamplingPlan:
    views: List[ViewSampling]
    hit_count: np.ndarray
    """Number of views seeing each cell, i.e. the size of its hit set"""

    @property
    def visible(self) -> np.ndarray:
        return (self.hit_count > 0).astype(np.float64)

    @classmethod
    def build(
        cls, reference: np.ndarray, rig: Sequence[CameraModel], patch_size: int
    ) -> "SamplingPlan":
        n_cells, n_ref, _ = reference.shape
        points = reference.reshape(-1, 3)
        hit_count = np.zeros(n_cells, dtype=np.int64)
        views = []

        for cam in rig:
            uv, _, hit = cam.project_many(points)
            hit = hit.reshape(n_cells, n_ref)
            # pixel centers of patch (r, c) sit on feature-grid node (r, c)
            location = (uv / patch_size - 0.5).reshape(n_cells, n_ref, 2)
            location[~hit] = OUTSIDE_LOCATION

            seen = hit.any(axis=1)
            cells = np.flatnonzero(seen)
            hit_count += seen
            views.append(
                ViewSampling(
                    cells=cells,
                    location=location[cells],
                    hit=hit[cells].astype(np.float64),
                )
            )

        return cls(views=views, hit_count=hit_count)


class SCABlock(Module):
    """One round of deformable cross-attention from volume queries to the views"""

    def __init__(self, width: int, config: SCAConfig, rng: np.random.Generator) -> None:
        self.heads = config.heads
        self.n_ref = config.n_ref
        self.points = config.points
        self.hidden = config.hidden

        per_query = config.heads * config.n_ref * config.points
        # Zero offsets: the first forward pass samples exactly at the reference points
        self.offsets = Linear(width, per_query * 2, rng, zero=True)
        self.weights = Linear(width, per_query, rng)
        self.value = Linear(width, config.hidden, rng)
        self.output = Linear(config.hidden, width, rng)
        self.norm1 = LayerNorm(width)
        self.mlp = MLP(width, 2 * width, rng)
        self.norm2 = LayerNorm(width)

    def attention_weights(self, queries: Tensor) -> Tensor:
        """(n, heads, n_ref, points), normalized over the sampling points"""

        n = queries.shape[0]
        logits = self.weights(queries).reshape(n, self.heads, self.n_ref, self.points)
        return ops.softmax(logits, axis=-1)

    def attend(
        self, queries: Tensor, view_features: Sequence[Tensor], plan: SamplingPlan
    ) -> Tensor:
        """
        Average over the hit views of the per-view deformable attention,
        summed over the reference points seen by each view. Cells seen by no
        view output zero.
        """

        n = queries.shape[0]
        heads, n_ref, points = self.heads, self.n_ref, self.points
        head_dim = self.hidden // heads

        offsets = self.offsets(queries).reshape(n, heads, n_ref, points, 2)
        weights = self.attention_weights(queries)

        total = None
        for view, features in zip(plan.views, view_features):
            if view.cells.size == 0:
                continue

            channels, grid_h, grid_w = features.shape
            values = self.value(features.reshape(channels, grid_h * grid_w).transpose())
            head_grids = values.transpose().reshape(heads, head_dim, grid_h, grid_w)

            n_view = view.cells.size
            view_weights = ops.gather(weights, view.cells) * view.hit[:, None, :, None]
            locations = ops.gather(offsets, view.cells) + view.location[:, None, :, None, :]

            per_head = []
            for m in range(heads):
                sampled = ops.sample_bilinear_2d(head_grids[m], locations[:, m])
                head_weights = view_weights[:, m].reshape(n_view, n_ref, points, 1)
                per_head.append((sampled * head_weights).sum(axis=(1, 2)))

            contribution = ops.scatter(ops.concat(per_head, axis=-1), view.cells, n)
            total = contribution if total is None else total + contribution

        if total is None:
            total = Tensor(np.zeros((n, self.hidden)))

        averaged = total / np.maximum(plan.hit_count, 1)[:, None].astype(np.float64)
        return self.output(averaged) * plan.visible[:, None]

    def __call__(
        self, queries: Tensor, view_features: Sequence[Tensor], plan: SamplingPlan
    ) -> Tensor:
        x = self.norm1(queries + self.attend(queries, view_features, plan))
        return self.norm2(x + self.mlp(x))


class SpatialCrossAttention(Module):
    def __init__(
        self,
        width: int,
        spec: VolumeSpec,
        config: SCAConfig,
        seed: int,
        rng: np.random.Generator,
    ) -> None:
        self.spec = spec
        self.query_embedding = parameter(
            rng.uniform(
                -QUERY_EMBEDDING_SCALE, QUERY_EMBEDDING_SCALE, size=(spec.n_cells, width)
            )
        )
        self.query_position = Tensor(cell_position_encoding(cell_index_grid(spec), width))
        self.blocks = [SCABlock(width, config, rng) for _ in range(config.blocks)]
        self.reference = reference_point_grid(spec, config.n_ref, seed)

    def queries(self) -> Tensor:
        return self.query_embedding + self.query_position

    def plan(self, rig: Sequence[CameraModel], patch_size: int) -> SamplingPlan:
        return SamplingPlan.build(self.reference, rig, patch_size)


def spatial_cross_attention(
    sca: SpatialCrossAttention,
    view_features: Sequence[Tensor],
    rig: Sequence[CameraModel],
    patch_size: int,
) -> VolumeFeature:
    """
    Lift per-view (C, H_p, W_p) patch-feature grids into the volume.

    The queries are refined by every block in turn; cells no view can see
    are zero in the result.
    """

    if len(view_features) != len(rig):
        raise ValueError(f"{len(view_features)} feature grids for {len(rig)} cameras")

    plan = sca.plan(rig, patch_size)
    queries = sca.queries()
    for block in sca.blocks:
        queries = block(queries, view_features, plan)
    return VolumeFeature.from_tokens(queries * plan.visible[:, None], sca.spec)


# Multi-modal interaction


class MMIMBlock(Module):
    """3D deformable self-attention over the fused volume, then an MLP, both post-norm"""

    def __init__(self, dim: int, config: MMIMConfig, rng: np.random.Generator) -> None:
        if dim % config.heads:
            raise ValueError(f"width {dim} is not divisible by {config.heads} heads")
        self.heads = config.heads
        self.points = config.points

        self.value = Linear(dim, dim, rng)
        self.offsets = Linear(dim, config.heads * config.points * 3, rng, zero=True)
        self.weights = Linear(dim, config.heads * config.points, rng)
        self.output = Linear(dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.mlp = MLP(dim, config.hidden, rng)
        self.norm2 = LayerNorm(dim)

    def attention_weights(self, tokens: Tensor) -> Tensor:
        """(n, heads, points), normalized over the sampling points"""

        n = tokens.shape[0]
        return ops.softmax(self.weights(tokens).reshape(n, self.heads, self.points), axis=-1)

    def attend(self, tokens: Tensor, spec: VolumeSpec) -> Tensor:
        n, dim = tokens.shape
        heads, points = self.heads, self.points
        head_dim = dim // heads

        grids = self.value(tokens).transpose().reshape(heads, head_dim, *spec.grid_shape)
        # cell centers are the integer nodes of the sampling grid
        anchors = cell_index_grid(spec).astype(np.float64)
        offsets = self.offsets(tokens).reshape(n, heads, points, 3)
        locations = offsets + anchors[:, None, None, :]
        weights = self.attention_weights(tokens)

        per_head = []
        for m in range(heads):
            sampled = ops.sample_trilinear_3d(grids[m], locations[:, m])
            per_head.append((sampled * weights[:, m].reshape(n, points, 1)).sum(axis=1))
        return self.output(ops.concat(per_head, axis=-1))

    def __call__(self, tokens: Tensor, spec: VolumeSpec) -> Tensor:
        x = self.norm1(tokens + self.attend(tokens, spec))
        return self.norm2(x + self.mlp(x))


class MMIM(Module):
    def __init__(self, width: int, config: MMIMConfig, rng: np.random.Generator) -> None:
        self.blocks = [MMIMBlock(2 * width, config, rng) for _ in range(config.blocks)]


def mmim_fuse(
    lidar: VolumeFeature, camera: VolumeFeature, mmim: MMIM
) -> Tuple[VolumeFeature, VolumeFeature]:
    """
    Fuse the two volumes: concatenate along channels, run the interaction
    blocks and split back. Without blocks the inputs are returned as they are.
    """

    if lidar.spec != camera.spec:
        raise ValueError("The two volumes must share the same grid")
    if not mmim.blocks:
        return lidar, camera

    spec = lidar.spec
    tokens = ops.concat([lidar.tokens(), camera.tokens()], axis=1)
    for block in mmim.blocks:
        tokens = block(tokens, spec)
    fused_lidar, fused_camera = ops.split(tokens, 2, axis=1)
    return (
        VolumeFeature.from_tokens(fused_lidar, spec),
        VolumeFeature.from_tokens(fused_camera, spec),
    )


# Back to the image plane


def project_volume_to_image_plane(
    volume: VolumeFeature,
    rig: Sequence[CameraModel],
    grid: Tuple[int, int],
    patch_size: int,
) -> Tensor:
    """
    Patch tokens (n_views * H_p * W_p, C) built from the volume: every cell
    center is projected into every view and each patch takes the mean of the
    cells landing in it. Patches no cell lands in are zero.
    """

    grid_h, grid_w = grid
    per_view = grid_h * grid_w
    centers = volume.spec.cell_centers()

    cells, patches = [], []
    for view, cam in enumerate(rig):
        uv, _, hit = cam.project_many(centers)
        seen = np.flatnonzero(hit)
        rows = np.floor(uv[seen, 1] / patch_size).astype(np.int64)
        cols = np.floor(uv[seen, 0] / patch_size).astype(np.int64)
        inside = (rows < grid_h) & (cols < grid_w)
        cells.append(seen[inside])
        patches.append(view * per_view + rows[inside] * grid_w + cols[inside])

    cells = np.concatenate(cells)
    patches = np.concatenate(patches)
    total = len(rig) * per_view
    counts = np.bincount(patches, minlength=total).astype(np.float64)

    summed = ops.scatter(ops.gather(volume.tokens(), cells), patches, total)
    return summed / np.maximum(counts, 1.0)[:, None]
