"""Finite-difference verification of every operation and composite block"""
from typing import Callable, Dict, List

import numpy as np

from volumae.config import DecoderConfig, EncoderConfig, RunConfig
from volumae.model import Module, StepSeeds, VolumaeModel, jitter_parameters
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
)
from volumae.model.reconstruct import (
    PatchDecoder,
    VoxelDecoder,
    decode_patches,
    decode_voxels,
    image_loss,
    masked_chamfer_loss,
    occupancy_loss,
)
from volumae.numerics import Tensor, check_gradients, ops
from volumae.scenegen import generate_scene
from volumae.schemas import CheckResult

from volumae.checks.instances import (
    PATCH_SIZE,
    VIEW_SIZE,
    WIDTH,
    off_grid,
    random_leaf,
    small_camera,
    small_mmim_config,
    small_sca_config,
    small_volume,
    view_grids,
)


OP_TOLERANCE = 1e-5
SOFTMAX_TOLERANCE = 1e-6
BLOCK_TOLERANCE = 1e-5
PIPELINE_TOLERANCE = 1e-4
OFFSET_JITTER = 0.05
PIPELINE_ENTRIES = 2


def _op_cases(rng: np.random.Generator) -> Dict[str, Callable[[], tuple]]:
    """Per operation: a builder returning (loss_fn, params) on fresh leaves"""

    def weights(*shape):
        return rng.normal(size=shape)

    cases = {}

    def binary(op, positive=False):
        def build():
            a, b = random_leaf(rng, 3, 4, name="a"), random_leaf(rng, 3, 4, name="b")
            if positive:
                b.data = np.abs(b.data) + 0.5
            w = weights(3, 4)
            return (lambda: (op(a, b) * w).sum()), [a, b]

        return build

    cases["add"] = binary(ops.add)
    cases["sub"] = binary(ops.sub)
    cases["mul"] = binary(ops.mul)
    cases["div"] = binary(ops.div, positive=True)

    def unary(op):
        def build():
            x = random_leaf(rng, 2, 5)
            w = weights(2, 5)
            return (lambda: (op(x) * w).sum()), [x]

        return build

    cases["neg"] = unary(ops.neg)
    cases["tanh"] = unary(ops.tanh)
    cases["gelu"] = unary(ops.gelu)
    cases["softplus"] = unary(ops.softplus)

    def matmul():
        a, b = random_leaf(rng, 3, 4, name="a"), random_leaf(rng, 4, 2, name="b")
        w = weights(3, 2)
        return (lambda: (ops.matmul(a, b) * w).sum()), [a, b]

    def layer_norm():
        x = random_leaf(rng, 3, 6)
        gamma, beta = random_leaf(rng, 6, name="gamma"), random_leaf(rng, 6, name="beta")
        w = weights(3, 6)
        return (lambda: (ops.layer_norm(x, gamma, beta) * w).sum()), [x, gamma, beta]

    def reductions():
        x = random_leaf(rng, 3, 4, 2)
        w = weights(3, 2)
        return (lambda: (ops.sum(x, axis=1) * w).sum() + ops.mean(x, axis=(0, 2)).sum()), [x]

    def amin():
        x = random_leaf(rng, 4, 5)
        w = weights(4)
        return (lambda: (ops.amin(x, axis=1) * w).sum()), [x]

    def shapes():
        a, b = random_leaf(rng, 2, 3, name="a"), random_leaf(rng, 2, 2, name="b")
        w, v = weights(2, 5), weights(2, 3)

        def loss():
            joined = ops.concat([a, b], axis=1)
            top, bottom = ops.split(joined, 2, axis=0)
            swapped = ops.concat([bottom, top], axis=1).reshape(5, 2)
            return (ops.transpose(swapped) * w).sum() + (joined[:, 1:4] * v).sum()

        return loss, [a, b]

    def gather_scatter():
        x = random_leaf(rng, 4, 3)
        index = np.array([2, 0, 2, 3])
        w = weights(6, 3)
        return (lambda: (ops.scatter(ops.gather(x, index), [5, 1, 5, 0], 6) * w).sum()), [x]

    def sample_bilinear_2d():
        grid = random_leaf(rng, 3, 4, 5, name="grid")
        location = Tensor(off_grid(rng, (6, 2), 4.0), requires_grad=True, name="location")
        w = weights(6, 3)
        return (lambda: (ops.sample_bilinear_2d(grid, location) * w).sum()), [grid, location]

    def sample_trilinear_3d():
        volume = random_leaf(rng, 2, 3, 3, 2, name="volume")
        location = Tensor(off_grid(rng, (5, 3), 2.0), requires_grad=True, name="location")
        w = weights(5, 2)
        loss = lambda: (ops.sample_trilinear_3d(volume, location) * w).sum()  # noqa: E731
        return loss, [volume, location]

    for build in (
        matmul,
        layer_norm,
        reductions,
        amin,
        shapes,
        gather_scatter,
        sample_bilinear_2d,
        sample_trilinear_3d,
    ):
        cases[build.__name__] = build

    return cases


def _result(name: str, errors: Dict[str, float], tolerance: float) -> CheckResult:
    worst = max(errors, key=errors.get)
    return CheckResult.at_most(
        name, errors[worst], tolerance, detail=f"largest error in `{worst}`"
    )


def check_op_gradients(config: RunConfig) -> CheckResult:
    """backward() of every operation against central differences"""

    rng = np.random.default_rng(config.seed)
    errors = {}
    for name, build in _op_cases(rng).items():
        loss_fn, params = build()
        errors[name] = check_gradients(loss_fn, params).max_error
    return _result("op_gradients", errors, OP_TOLERANCE)


def check_softmax_gradient(config: RunConfig) -> CheckResult:
    """Gradient of sum(softmax(x) v) along both axes of a small matrix"""

    rng = np.random.default_rng(config.seed + 1)
    errors = {}
    for axis in (0, -1):
        x = random_leaf(rng, 3, 4)
        v = rng.normal(size=(3, 4))
        errors[f"axis {axis}"] = check_gradients(
            lambda x=x, v=v, axis=axis: (ops.softmax(x, axis=axis) * v).sum(), [x]
        ).max_error
    return _result("softmax_gradient", errors, SOFTMAX_TOLERANCE)


def check_encoder_gradient(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed + 2)
    encoder = Encoder(EncoderConfig(depth=1, width=WIDTH, heads=2, mlp_ratio=2), rng)
    tokens = rng.normal(size=(5, WIDTH))
    w = rng.normal(size=(5, WIDTH))
    report = check_gradients(
        lambda: (encode(Tensor(tokens), encoder) * w).sum(), encoder.parameters()
    )
    return _result("encoder_gradient", report.errors, BLOCK_TOLERANCE)


def check_sca_gradient(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed + 3)
    spec = small_volume()
    sca = SpatialCrossAttention(WIDTH, spec, small_sca_config(), config.seed, rng)
    jitter_parameters(sca, OFFSET_JITTER, config.seed, names=["offsets"])
    rig = [small_camera()]
    grids = view_grids(rng)
    w = rng.normal(size=(WIDTH, *spec.grid_shape))

    def loss():
        return (spatial_cross_attention(sca, grids, rig, PATCH_SIZE).data * w).sum()

    report = check_gradients(loss, sca.parameters())
    return _result("sca_gradient", report.errors, BLOCK_TOLERANCE)


def check_mmim_gradient(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed + 4)
    spec = small_volume()
    mmim = MMIM(WIDTH, small_mmim_config(), rng)
    jitter_parameters(mmim, OFFSET_JITTER, config.seed, names=["offsets"])
    lidar = VolumeFeature(data=Tensor(rng.normal(size=(WIDTH, *spec.grid_shape))), spec=spec)
    camera = VolumeFeature(data=Tensor(rng.normal(size=(WIDTH, *spec.grid_shape))), spec=spec)
    w = rng.normal(size=(2, WIDTH, *spec.grid_shape))

    def loss():
        fused_lidar, fused_camera = mmim_fuse(lidar, camera, mmim)
        return (fused_lidar.data * w[0]).sum() + (fused_camera.data * w[1]).sum()

    report = check_gradients(loss, mmim.parameters())
    return _result("mmim_gradient", report.errors, BLOCK_TOLERANCE)


class _Fusion(Module):
    def __init__(self, sca: SpatialCrossAttention, mmim: MMIM) -> None:
        self.sca = sca
        self.mmim = mmim


def check_fusion_end_to_end(config: RunConfig) -> CheckResult:
    """
    LiDAR scatter and camera lifting, interaction, then the voxel gather and
    the back-projection to patches, every entry of every parameter and input
    """

    rng = np.random.default_rng(config.seed + 6)
    spec = small_volume()
    fusion = _Fusion(
        SpatialCrossAttention(WIDTH, spec, small_sca_config(), config.seed, rng),
        MMIM(WIDTH, small_mmim_config(), rng),
    )
    jitter_parameters(fusion, OFFSET_JITTER, config.seed, names=["offsets"])

    rig = [small_camera()]
    grid = (VIEW_SIZE // PATCH_SIZE, VIEW_SIZE // PATCH_SIZE)
    coords = np.array([[0, 1, 0], [2, 2, 1], [3, 0, 0], [1, 3, 1], [2, 1, 0]])
    voxels = random_leaf(rng, coords.shape[0], WIDTH, name="voxel_tokens")
    patches = random_leaf(rng, WIDTH, *grid, name="patch_grid")
    w_voxels = rng.normal(size=(coords.shape[0], WIDTH))
    w_patches = rng.normal(size=(grid[0] * grid[1], WIDTH))

    def loss():
        lidar = scatter_lidar_to_volume(voxels, coords, spec)
        camera = spatial_cross_attention(fusion.sca, [patches], rig, PATCH_SIZE)
        fused_lidar, fused_camera = mmim_fuse(lidar, camera, fusion.mmim)
        gathered = gather_voxel_tokens(fused_lidar, coords)
        projected = project_volume_to_image_plane(fused_camera, rig, grid, PATCH_SIZE)
        return (gathered * w_voxels).sum() + (projected * w_patches).sum()

    report = check_gradients(loss, [*fusion.parameters(), voxels, patches])
    return _result("fusion_end_to_end", report.errors, BLOCK_TOLERANCE)


def check_decoder_gradients(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed + 5)
    decoder_config = DecoderConfig(voxel_depth=1, patch_depth=1, heads=2, mlp_ratio=2, n_pts=4)

    voxel_decoder = VoxelDecoder(WIDTH, decoder_config, rng)
    masked = Tensor(rng.normal(size=(3, WIDTH)))
    negatives = Tensor(rng.normal(size=(2, WIDTH)))
    targets = [rng.uniform(-0.5, 0.5, size=(n, 3)) for n in (2, 5, 3)]
    labels = np.array([1.0, 1.0, 1.0, 0.0, 0.0])

    def voxel_loss():
        prediction = decode_voxels(masked, negatives, voxel_decoder)
        return masked_chamfer_loss(prediction.offsets, targets) + occupancy_loss(
            prediction.occupancy_logits, labels
        )

    patch_decoder = PatchDecoder(WIDTH, 2, decoder_config, rng)
    tokens = Tensor(rng.normal(size=(4, WIDTH)))
    pixels = rng.uniform(size=(4, 12))
    mask = np.array([True, False, True, True])

    def patch_loss():
        return image_loss(decode_patches(tokens, patch_decoder), pixels, mask)

    voxel_report = check_gradients(voxel_loss, voxel_decoder.parameters())
    patch_report = check_gradients(patch_loss, patch_decoder.parameters())
    errors = {f"voxel.{name}": error for name, error in voxel_report.errors.items()}
    errors.update({f"patch.{name}": error for name, error in patch_report.errors.items()})
    return _result("decoder_gradients", errors, BLOCK_TOLERANCE)


def check_pipeline_gradient(config: RunConfig) -> CheckResult:
    """Scene to total loss, a few coordinates of every parameter"""

    scene = generate_scene(config.scenes.scene_spec(config.seed, config.volume))
    model = VolumaeModel(config)
    jitter_parameters(model, OFFSET_JITTER, config.seed, names=["offsets"])
    seeds = StepSeeds.derive(config.seed, 0)
    params: List[Tensor] = model.parameters()

    report = check_gradients(
        lambda: model.forward(scene, seeds).losses.total,
        params,
        max_entries=PIPELINE_ENTRIES,
        seed=config.seed,
    )
    return _result("pipeline_gradient", report.errors, PIPELINE_TOLERANCE)
