import logging
from pathlib import Path
from typing import List

import numpy as np
from pydantic import BaseModel

from volumae.model import StepSeeds, VolumaeModel
from volumae.model.tokenizer import patches_to_images
from volumae.numerics import no_grad
from volumae.orchestrator.data_storage import get_data_path, store_json
from volumae.scenegen import Scene


logger = logging.getLogger(__name__)

PREDICTED_POINTS_FILE = "masked_points_pred.json"
TARGET_POINTS_FILE = "masked_points_gt.json"


class ReconstructionArtifacts(BaseModel):
    directory: Path
    images: List[Path]
    predicted_points: Path
    target_points: Path


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: Path, image: np.ndarray) -> Path:
    """Binary PPM (P6), 8 bits per channel; `image` is (H, W, 3) in [0, 1]"""

    height, width, _ = image.shape
    with path.open(mode="wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(to_bytes(image).tobytes())
    return path


def read_ppm(path: Path) -> np.ndarray:
    """(H, W, 3) uint8 pixels of a binary PPM written by `write_ppm`"""

    data = Path(path).read_bytes()
    magic, size, depth, pixels = data.split(b"\n", 3)
    if magic != b"P6" or depth != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PPM")
    width, height = (int(value) for value in size.split())
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)


def _points_json(points: np.ndarray) -> list:
    return [[float(x), float(y), float(z)] for x, y, z in np.asarray(points).reshape(-1, 3)]


def dump_reconstruction(
    model: VolumaeModel, scene: Scene, directory: Path, seeds: StepSeeds
) -> ReconstructionArtifacts:
    """
    Write, per view, the original, masked and reconstructed images, and the
    predicted and true points of the masked voxels.

    Visible patches of the reconstruction are copied from the original,
    masked patches of the masked image are black.
    """

    model.check_scene(scene)
    with no_grad():
        result = model.forward(scene, seeds)

    patches = result.patches
    mask = patches.mask[:, None]
    masked = np.where(mask, 0.0, patches.targets)
    recon = np.where(mask, result.patch_prediction.pixels.numpy(), patches.targets)

    def images_of(rows: np.ndarray) -> List[np.ndarray]:
        return patches_to_images(rows, patches.n_views, patches.grid, patches.patch_size)

    written = []
    for view, (original, hidden, rebuilt) in enumerate(
        zip(images_of(patches.targets), images_of(masked), images_of(recon))
    ):
        for kind, image in (("original", original), ("masked", hidden), ("recon", rebuilt)):
            written.append(write_ppm(get_data_path(directory, f"view{view}_{kind}.ppm"), image))

    spec = model.spec
    predicted = result.voxel_prediction.points(result.masked_centers, spec.cell).numpy()
    targets = np.concatenate(
        [result.voxels.points_per_voxel[index] for index in result.voxels.masked], axis=0
    )

    predicted_path = store_json(directory, PREDICTED_POINTS_FILE, _points_json(predicted))
    target_path = store_json(directory, TARGET_POINTS_FILE, _points_json(targets))

    logger.debug("Reconstruction of scene %d written to %s", scene.seed, directory)

    return ReconstructionArtifacts(
        directory=Path(directory),
        images=written,
        predicted_points=predicted_path,
        target_points=target_path,
    )
