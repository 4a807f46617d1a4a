import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from volumae.config import RunConfig
from volumae.exceptions import ConfigurationError, EmptyMaskError
from volumae.model.embeddings import cell_position_encoding
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
from volumae.model.layers import Module
from volumae.model.reconstruct import (
    PatchDecoder,
    PatchPrediction,
    VoxelDecoder,
    VoxelPrediction,
    decode_patches,
    decode_voxels,
    image_loss,
    masked_chamfer_loss,
    occupancy_loss,
    total_loss,
    voxel_loss,
)
from volumae.model.tokenizer import (
    PatchEmbedder,
    PatchTokenBatch,
    VoxelEmbedder,
    VoxelTokenBatch,
    embed_patches,
    make_mask_plan,
    voxelize_dynamic,
)
from volumae.numerics import Tensor, ops
from volumae.scenegen import Scene


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSeeds:
    """Seeds of the random choices of one forward pass"""

    lidar_mask: int
    camera_mask: int
    negatives: int

    @classmethod
    def derive(cls, run_seed: int, step: int, sample: int = 0) -> "StepSeeds":
        # the two branches draw their masks from independent streams
        state = np.random.SeedSequence([run_seed, step, sample]).generate_state(3)
        return cls(*(int(value) for value in state))


@dataclass
class LossBreakdown:
    total: Tensor
    chamfer: Tensor
    occupancy: Tensor
    voxel: Tensor
    image: Tensor

    def values(self) -> Dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_chamfer": self.chamfer.item(),
            "loss_occ": self.occupancy.item(),
            "loss_img": self.image.item(),
        }


@dataclass
class ForwardResult:
    losses: LossBreakdown
    voxels: VoxelTokenBatch
    patches: PatchTokenBatch
    voxel_prediction: VoxelPrediction
    patch_prediction: PatchPrediction
    masked_centers: np.ndarray
    fused_lidar: VolumeFeature
    fused_camera: VolumeFeature


class VolumaeModel(Module):
    """The two tokenizers and encoders, the volume fusion and both decoders"""

    def __init__(self, config: RunConfig) -> None:
        rng = np.random.default_rng(config.seed)
        width = config.width
        self.config = config
        self.spec = config.volume

        self.voxel_embedder = VoxelEmbedder(width, rng)
        self.patch_embedder = PatchEmbedder(
            width,
            config.scenes.n_views,
            config.patch_grid,
            config.tokenizer.patch_size,
            config.tokenizer.positional_embedding,
            rng,
        )
        self.lidar_encoder = Encoder(config.encoder, rng)
        self.camera_encoder = Encoder(config.encoder, rng)
        self.sca = SpatialCrossAttention(width, self.spec, config.sca, config.seed, rng)
        self.mmim = MMIM(width, config.mmim, rng)
        self.voxel_decoder = VoxelDecoder(width, config.decoder, rng)
        self.patch_decoder = PatchDecoder(
            width, config.tokenizer.patch_size, config.decoder, rng
        )

        self.parameters()

    def check_scene(self, scene: Scene) -> None:
        expected = (self.config.scenes.n_views, tuple(self.config.scenes.image_size))
        found = (scene.n_views, tuple(scene.image_size))
        if found != expected:
            raise ConfigurationError(
                f"Scene {scene.seed} has {found[0]} views of {found[1]} pixels, "
                f"the model expects {expected[0]} views of {expected[1]}"
            )

    def forward(self, scene: Scene, seeds: StepSeeds) -> ForwardResult:
        config = self.config
        spec = self.spec
        patch_size = config.tokenizer.patch_size

        # Tokenize and mask
        voxels = voxelize_dynamic(
            scene.points, spec, self.voxel_embedder, config.tokenizer.point_decoration
        )
        voxels = voxels.with_mask(
            make_mask_plan(voxels.n_tokens, config.mask_ratio_lidar, seeds.lidar_mask)
        )
        patches = embed_patches(scene.images, patch_size, self.patch_embedder)
        patches = patches.with_mask(
            make_mask_plan(patches.n_tokens, config.mask_ratio_camera, seeds.camera_mask)
        )

        masked_voxels = voxels.masked
        if masked_voxels.size == 0:
            raise EmptyMaskError(
                f"{voxels.n_tokens} occupied cells at ratio {config.mask_ratio_lidar} mask none"
            )

        # Encode the visible tokens only
        lidar_tokens = encode(ops.gather(voxels.features, voxels.visible), self.lidar_encoder)
        camera_tokens = encode(
            ops.gather(patches.features, patches.visible), self.camera_encoder
        )

        # Lift both branches into the volume
        lidar_volume = scatter_lidar_to_volume(
            lidar_tokens, voxels.coords[voxels.visible], spec
        )
        view_grids = tokens_to_view_grids(
            ops.scatter(camera_tokens, patches.visible, patches.n_tokens),
            patches.n_views,
            patches.grid,
        )
        camera_volume = spatial_cross_attention(self.sca, view_grids, scene.cameras, patch_size)

        fused_lidar, fused_camera = mmim_fuse(lidar_volume, camera_volume, self.mmim)

        # Voxel reconstruction: masked cells against sampled empty cells
        masked_coords = voxels.coords[masked_voxels]
        negative_coords = self._sample_negatives(voxels, masked_voxels.size, seeds.negatives)
        candidate_coords = np.concatenate([masked_coords, negative_coords], axis=0)
        voxel_prediction = decode_voxels(
            gather_voxel_tokens(fused_lidar, masked_coords),
            gather_voxel_tokens(fused_lidar, negative_coords) if len(negative_coords) else None,
            self.voxel_decoder,
            cell_position_encoding(candidate_coords, config.width),
        )

        masked_centers = spec.lower + (masked_coords + 0.5) * spec.cell
        chamfer = masked_chamfer_loss(
            voxel_prediction.points(masked_centers, spec.cell),
            [voxels.points_per_voxel[index] for index in masked_voxels],
        )
        labels = np.concatenate([np.ones(masked_voxels.size), np.zeros(len(negative_coords))])
        occupancy = occupancy_loss(voxel_prediction.occupancy_logits, labels)

        # Image reconstruction from the fused volume
        patch_tokens = project_volume_to_image_plane(
            fused_camera, scene.cameras, patches.grid, patch_size
        )
        patch_prediction = decode_patches(
            patch_tokens, self.patch_decoder, self.patch_embedder.position_view_embedding()
        )
        image = image_loss(
            patch_prediction, patches.targets, patches.mask, config.loss.masked_only_img_loss
        )

        voxel = voxel_loss(chamfer, occupancy)
        total = total_loss(voxel, image, (config.loss.weight_voxel, config.loss.weight_image))

        return ForwardResult(
            losses=LossBreakdown(
                total=total, chamfer=chamfer, occupancy=occupancy, voxel=voxel, image=image
            ),
            voxels=voxels,
            patches=patches,
            voxel_prediction=voxel_prediction,
            patch_prediction=patch_prediction,
            masked_centers=masked_centers,
            fused_lidar=fused_lidar,
            fused_camera=fused_camera,
        )

    def _sample_negatives(
        self, voxels: VoxelTokenBatch, n_masked: int, seed: int
    ) -> np.ndarray:
        occupied = np.zeros(self.spec.n_cells, dtype=bool)
        occupied[self.spec.flat_index(voxels.coords)] = True
        empty = np.flatnonzero(~occupied)

        count = min(n_masked, empty.size)
        if count == 0:
            return np.zeros((0, 3), dtype=np.int64)
        chosen = np.random.default_rng(seed).choice(empty, size=count, replace=False)
        return np.stack(np.unravel_index(np.sort(chosen), self.spec.grid_shape), axis=1)


def jitter_parameters(
    model: Module, scale: float, seed: int, names: Optional[list] = None
) -> None:
    """
    Add small uniform noise to parameters in place.

    Zero-initialized offset heads sample exactly on grid nodes, where
    interpolation isn't differentiable; gradient checks move them off first.
    """

    rng = np.random.default_rng(seed)
    for name, param in model.named_parameters():
        if names is None or any(part in name for part in names):
            param.data += rng.uniform(-scale, scale, size=param.shape)
