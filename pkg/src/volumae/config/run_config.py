from enum import Enum
from typing import ClassVar, Tuple

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, model_validator

from volumae.geometry import VolumeSpec
from volumae.scenegen.world import LidarConfig, SceneSpec


class InteractionSpace(str, Enum):
    VOLUME3D = "volume3d"
    BEV = "bev"


class PositionalEmbedding(str, Enum):
    SINUSOIDAL = "sinusoidal"
    LEARNED = "learned"


class PointDecoration(str, Enum):
    NORMALIZED = "normalized"
    """Positions in units of the perception range, offsets in units of the cell"""
    METRIC = "metric"
    """Raw ego-frame x, y, z and offsets, all in meters"""


DESK_VOLUME = VolumeSpec(cell_size=(5.0, 5.0, 4.0))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SceneConfig(_Section):
    """How many scene files a run uses and how gen-scenes builds them"""

    train: PositiveInt = 1
    val: NonNegativeInt = 0
    n_boxes: NonNegativeInt = 8
    n_views: PositiveInt = 6
    image_size: Tuple[PositiveInt, PositiveInt] = (64, 176)
    camera_height: float = 1.6
    horizontal_fov_deg: float = Field(default=70.0, gt=0, lt=180)
    lidar: LidarConfig = Field(default_factory=LidarConfig)

    def scene_spec(self, seed: int, volume: VolumeSpec) -> SceneSpec:
        return SceneSpec(
            seed=seed,
            n_boxes=self.n_boxes,
            n_views=self.n_views,
            image_size=self.image_size,
            camera_height=self.camera_height,
            horizontal_fov_deg=self.horizontal_fov_deg,
            lidar=self.lidar,
            volume=volume,
        )


class TokenizerConfig(_Section):
    patch_size: PositiveInt = 8
    positional_embedding: PositionalEmbedding = PositionalEmbedding.SINUSOIDAL
    point_decoration: PointDecoration = PointDecoration.NORMALIZED


class EncoderConfig(_Section):
    depth: NonNegativeInt = 2
    width: PositiveInt = 192
    heads: PositiveInt = 4
    mlp_ratio: PositiveInt = 4

    @model_validator(mode="after")
    def check_heads(self) -> "EncoderConfig":
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by {self.heads} heads")
        return self


class SCAConfig(_Section):
    blocks: PositiveInt = 2
    hidden: PositiveInt = 192
    n_ref: PositiveInt = 4
    points: PositiveInt = 4
    heads: PositiveInt = 8

    @model_validator(mode="after")
    def check_heads(self) -> "SCAConfig":
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} is not divisible by {self.heads} heads")
        return self


class MMIMConfig(_Section):
    blocks: NonNegativeInt = 3
    heads: PositiveInt = 8
    points: PositiveInt = 4
    hidden: PositiveInt = 768


class DecoderConfig(_Section):
    voxel_depth: NonNegativeInt = 2
    patch_depth: NonNegativeInt = 2
    heads: PositiveInt = 4
    mlp_ratio: PositiveInt = 4
    n_pts: PositiveInt = 16


class LossConfig(_Section):
    weight_voxel: float = Field(default=1.0, ge=0)
    weight_image: float = Field(default=1.0, ge=0)
    masked_only_img_loss: bool = True


class OptimizerConfig(_Section):
    MAIN_TEXT_LR: ClassVar[float] = 2.5e-5

    base_lr: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=0.001, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    warmup_steps: NonNegativeInt = 30

    @model_validator(mode="after")
    def check_betas(self) -> "OptimizerConfig":
        if not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        return self


class RunConfig(_Section):
    """Everything a pre-training run depends on; the run is a pure function of it"""

    seed: NonNegativeInt = 0
    scenes: SceneConfig = Field(default_factory=SceneConfig)
    volume: VolumeSpec = DESK_VOLUME
    interaction_space: InteractionSpace = InteractionSpace.VOLUME3D
    mask_ratio_lidar: float = Field(default=0.70, ge=0, lt=1)
    mask_ratio_camera: float = Field(default=0.75, ge=0, lt=1)
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    sca: SCAConfig = Field(default_factory=SCAConfig)
    mmim: MMIMConfig = Field(default_factory=MMIMConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    total_steps: PositiveInt = 300
    batch_size: PositiveInt = 1
    checkpoint_interval: PositiveInt = 100

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.interaction_space == InteractionSpace.BEV:
            z_span = self.volume.z_range[1] - self.volume.z_range[0]
            if self.volume.cell_size[2] != z_span:
                self.volume = self.volume.as_bev()

        width = self.encoder.width
        if (2 * width) % self.mmim.heads:
            raise ValueError(
                f"the fused width {2 * width} is not divisible by {self.mmim.heads} MMIM heads"
            )
        if width % self.decoder.heads:
            raise ValueError(
                f"width {width} is not divisible by {self.decoder.heads} decoder heads"
            )

        patch = self.tokenizer.patch_size
        height, image_width = self.scenes.image_size
        if height % patch or image_width % patch:
            raise ValueError(
                f"patch size {patch} doesn't divide the image size {self.scenes.image_size}"
            )

        # The scene generator must be able to place boxes in the volume
        self.scenes.scene_spec(0, self.volume)

        return self

    @property
    def width(self) -> int:
        return self.encoder.width

    @property
    def patch_grid(self) -> Tuple[int, int]:
        height, width = self.scenes.image_size
        patch = self.tokenizer.patch_size
        return height // patch, width // patch

    def with_interaction_space(self, space: InteractionSpace) -> "RunConfig":
        """A copy running in `space`; leaving BEV splits the height back into two cells"""

        volume = self.volume
        if InteractionSpace(space) == InteractionSpace.VOLUME3D and volume.grid_shape[2] == 1:
            z_span = volume.z_range[1] - volume.z_range[0]
            volume = volume.model_copy(
                update={"cell_size": (volume.cell_size[0], volume.cell_size[1], z_span / 2)}
            )
        data = self.model_dump(mode="json")
        data["interaction_space"] = InteractionSpace(space).value
        data["volume"] = volume.model_dump(mode="json")
        return RunConfig.model_validate(data)

    @classmethod
    def desk(cls) -> "RunConfig":
        return cls()

    @classmethod
    def paper_preset(cls) -> "RunConfig":
        return cls(
            volume=VolumeSpec(),
            scenes=SceneConfig(image_size=(256, 704)),
            sca=SCAConfig(blocks=6, hidden=256),
            optimizer=OptimizerConfig(base_lr=5e-4, warmup_steps=1000),
        )

    @classmethod
    def tiny(cls) -> "RunConfig":
        """Small enough for gradient checks and unit tests"""

        return cls(
            volume=VolumeSpec(cell_size=(25.0, 25.0, 4.0)),
            scenes=SceneConfig(
                n_boxes=3,
                n_views=2,
                image_size=(16, 32),
                horizontal_fov_deg=90.0,
                lidar=LidarConfig(azimuth_steps=90, n_rings=4),
            ),
            tokenizer=TokenizerConfig(patch_size=8),
            encoder=EncoderConfig(depth=1, width=8, heads=2, mlp_ratio=2),
            sca=SCAConfig(blocks=1, hidden=8, n_ref=2, points=2, heads=2),
            mmim=MMIMConfig(blocks=1, heads=2, points=2, hidden=16),
            decoder=DecoderConfig(voxel_depth=1, patch_depth=1, heads=2, mlp_ratio=2, n_pts=4),
            optimizer=OptimizerConfig(warmup_steps=2),
            total_steps=6,
            checkpoint_interval=3,
        )
