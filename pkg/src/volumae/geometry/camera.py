from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt, field_validator, model_validator

from volumae.exceptions import DegenerateProjectionError


# Points closer than this to the camera plane can't be projected at all
DEGENERATE_DEPTH = 1e-9
# Minimum depth for a point to count as inside a view frustum
MIN_HIT_DEPTH = 1e-6
ORTHONORMAL_TOLERANCE = 1e-9


class CameraModel(BaseModel):
    """
    Pinhole camera: `intrinsics` K (3x4, pixels) and `extrinsics` R_t (4x4)
    mapping homogeneous ego coordinates to the camera frame (x right,
    y down, z forward).
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: PositiveInt
    height: PositiveInt

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("intrinsics", "extrinsics", mode="before")
    @classmethod
    def to_float_array(cls, value):
        array = np.array(value, dtype=np.float64)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def check_matrices(self) -> "CameraModel":
        K, Rt = self.intrinsics, self.extrinsics

        if K.shape != (3, 4):
            raise ValueError(f"intrinsics must be 3x4, got {K.shape}")
        if Rt.shape != (4, 4):
            raise ValueError(f"extrinsics must be 4x4, got {Rt.shape}")
        if not np.array_equal(K[2], [0.0, 0.0, 1.0, 0.0]):
            raise ValueError("the last row of the intrinsics must be (0, 0, 1, 0)")
        if not np.array_equal(Rt[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("the bottom row of the extrinsics must be (0, 0, 0, 1)")

        rotation = Rt[:3, :3]
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise ValueError("the rotation block of the extrinsics is not orthonormal")

        return self

    @classmethod
    def looking_at_yaw(
        cls,
        yaw_deg: float,
        position: Sequence[float],
        width: int,
        height: int,
        horizontal_fov_deg: float,
    ) -> "CameraModel":
        """A level camera at `position` whose optical axis has the given yaw"""

        yaw = np.deg2rad(yaw_deg)
        forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        rotation = np.stack([right, down, forward])

        extrinsics = np.eye(4)
        extrinsics[:3, :3] = rotation
        extrinsics[:3, 3] = -rotation @ np.asarray(position, dtype=np.float64)

        focal = (width / 2.0) / np.tan(np.deg2rad(horizontal_fov_deg) / 2.0)
        intrinsics = np.array(
            [
                [focal, 0.0, width / 2.0, 0.0],
                [0.0, focal, height / 2.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )
        return cls(intrinsics=intrinsics, extrinsics=extrinsics, width=width, height=height)

    @property
    def projection(self) -> np.ndarray:
        return self.intrinsics @ self.extrinsics

    @property
    def center(self) -> np.ndarray:
        rotation = self.extrinsics[:3, :3]
        return -rotation.T @ self.extrinsics[:3, 3]

    @property
    def focal(self) -> float:
        return float(self.intrinsics[0, 0])

    def to_camera_frame(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.extrinsics[:3, :3].T + self.extrinsics[:3, 3]

    def project_many(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Vectorised projection of (N, 3) ego points.

        Returns (uv (N, 2), depth (N,), hit (N,)); uv of points too close to the
        camera plane is undefined and set to -1.
        """

        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        homogeneous = np.concatenate([points, np.ones((points.shape[0], 1))], axis=1)
        image = homogeneous @ self.projection.T
        depth = image[:, 2]
        safe = np.abs(depth) >= DEGENERATE_DEPTH
        uv = np.full((points.shape[0], 2), -1.0)
        uv[safe] = image[safe, :2] / depth[safe, None]
        hit = (
            (depth > MIN_HIT_DEPTH)
            & (uv[:, 0] >= 0)
            & (uv[:, 0] < self.width)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] < self.height)
        )
        return uv, depth, hit

    def unproject(self, u: float, v: float, depth: float) -> np.ndarray:
        """Inverse of `project_point`: the ego point seen at (u, v) with `depth`"""

        K3 = self.intrinsics[:, :3]
        camera_point = np.linalg.solve(
            K3, depth * np.array([u, v, 1.0]) - self.intrinsics[:, 3]
        )
        rotation = self.extrinsics[:3, :3]
        return rotation.T @ (camera_point - self.extrinsics[:3, 3])

    def to_dict(self) -> dict:
        return {
            "K": self.intrinsics.reshape(-1).tolist(),
            "Rt": self.extrinsics.reshape(-1).tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(
            intrinsics=np.asarray(data["K"], dtype=np.float64).reshape(3, 4),
            extrinsics=np.asarray(data["Rt"], dtype=np.float64).reshape(4, 4),
            width=data["width"],
            height=data["height"],
        )


def project_point(cam: CameraModel, p: Sequence[float]) -> Tuple[float, float, float]:
    """
    Evaluate z [u, v, 1]^T = K R_t [x, y, z, 1]^T for one ego point.

    Raises:
        DegenerateProjectionError: the point lies on the camera plane
    """

    image = cam.projection @ np.array([p[0], p[1], p[2], 1.0], dtype=np.float64)
    depth = float(image[2])
    if abs(depth) < DEGENERATE_DEPTH:
        raise DegenerateProjectionError(depth)
    return float(image[0] / depth), float(image[1] / depth), depth


def hit_views(rig: Sequence[CameraModel], p: Sequence[float]) -> Set[int]:
    """Indices of the views whose image rectangle contains the projection of `p`"""

    if not rig:
        raise ValueError("The camera rig is empty")

    hits = set()
    for index, cam in enumerate(rig):
        _, _, hit = cam.project_many(np.asarray(p, dtype=np.float64))
        if hit[0]:
            hits.add(index)
    return hits


def hit_masks(rig: Iterable[CameraModel], points: np.ndarray) -> np.ndarray:
    """(n_views, N) boolean frustum membership of many points"""

    return np.stack([cam.project_many(points)[2] for cam in rig])


def camera_ring(
    n_views: int,
    height: float,
    image_size: Tuple[int, int],
    horizontal_fov_deg: float,
    first_yaw_deg: float = 0.0,
) -> List[CameraModel]:
    """Level cameras evenly spaced in yaw around the ego origin"""

    image_height, image_width = image_size
    spacing = 360.0 / n_views
    return [
        CameraModel.looking_at_yaw(
            first_yaw_deg + i * spacing,
            (0.0, 0.0, height),
            width=image_width,
            height=image_height,
            horizontal_fov_deg=horizontal_fov_deg,
        )
        for i in range(n_views)
    ]
