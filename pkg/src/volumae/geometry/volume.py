from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator


_INTEGRAL_TOLERANCE = 1e-9
# Jittered reference points stay this far (in cell fractions) from cell faces
_REFERENCE_MARGIN = 0.05


class VolumeCoord(NamedTuple):
    ix: int
    iy: int
    iz: int


class VolumeSpec(BaseModel):
    """
    The unified 3D volume: a partition of the ego-frame perception range
    into half-open cells [min, max).
    """

    x_range: Tuple[float, float] = (-50.0, 50.0)
    y_range: Tuple[float, float] = (-50.0, 50.0)
    z_range: Tuple[float, float] = (-5.0, 3.0)
    cell_size: Tuple[float, float, float] = (0.5, 0.5, 4.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def check_grid(self) -> "VolumeSpec":
        for axis, (low, high), size in zip("xyz", self.ranges, self.cell_size):
            if high <= low:
                raise ValueError(f"The {axis} range must have a positive span")
            if size <= 0:
                raise ValueError(f"The {axis} cell size must be positive")
            cells = (high - low) / size
            if abs(cells - round(cells)) > _INTEGRAL_TOLERANCE * max(1.0, cells):
                raise ValueError(
                    f"The {axis} span {high - low} is not a multiple of the cell size {size}"
                )
        return self

    @property
    def ranges(self) -> Tuple[Tuple[float, float], ...]:
        return (self.x_range, self.y_range, self.z_range)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_range[1], self.y_range[1], self.z_range[1]])

    @property
    def cell(self) -> np.ndarray:
        return np.asarray(self.cell_size, dtype=np.float64)

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return tuple(  # type: ignore[return-value]
            int(round((high - low) / size))
            for (low, high), size in zip(self.ranges, self.cell_size)
        )

    @property
    def n_cells(self) -> int:
        H, W, Z = self.grid_shape
        return H * W * Z

    def flat_index(self, coords) -> np.ndarray:
        """Row-major (ix, iy, iz) -> flat cell index, for one coord or an (N, 3) array"""

        coords = np.asarray(coords, dtype=np.int64)
        return np.ravel_multi_index(tuple(coords.T), self.grid_shape)

    def coord_of(self, index: int) -> VolumeCoord:
        ix, iy, iz = np.unravel_index(int(index), self.grid_shape)
        return VolumeCoord(int(ix), int(iy), int(iz))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= self.lower) & (points < self.upper), axis=1)

    def coords_of_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Cell coordinates of many points.

        Returns (coords (N, 3) int64, valid (N,) bool); coords of invalid points
        are clipped and must not be used.
        """

        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        coords = np.floor((points - self.lower) / self.cell).astype(np.int64)
        shape = np.asarray(self.grid_shape)
        valid = np.all((coords >= 0) & (coords < shape), axis=1)
        return np.clip(coords, 0, shape - 1), valid

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 3) ego-frame centers in flat index order"""

        H, W, Z = self.grid_shape
        grid = np.stack(
            np.meshgrid(np.arange(H), np.arange(W), np.arange(Z), indexing="ij"), axis=-1
        ).reshape(-1, 3)
        return self.lower + (grid + 0.5) * self.cell

    def to_cell_units(self, points: np.ndarray) -> np.ndarray:
        """Continuous index coordinates in which cell centers are integer nodes"""

        return (np.asarray(points, dtype=np.float64) - self.lower) / self.cell - 0.5

    def as_bev(self) -> "VolumeSpec":
        """Same ground grid with a single cell spanning the whole height"""

        return self.model_copy(
            update={
                "cell_size": (
                    self.cell_size[0],
                    self.cell_size[1],
                    self.z_range[1] - self.z_range[0],
                )
            }
        )


def point_to_volume_coord(spec: VolumeSpec, p: Sequence[float]) -> Optional[VolumeCoord]:
    coords, valid = spec.coords_of_points(np.asarray(p, dtype=np.float64))
    if not valid[0]:
        return None
    return VolumeCoord(*(int(i) for i in coords[0]))


def volume_cell_center(spec: VolumeSpec, c: VolumeCoord) -> np.ndarray:
    return spec.lower + (np.asarray(c, dtype=np.float64) + 0.5) * spec.cell


def reference_points(
    spec: VolumeSpec, c: VolumeCoord, n_ref: int, seed: int
) -> np.ndarray:
    """
    `n_ref` ego points inside cell `c`: its center followed by `n_ref - 1`
    jittered samples, deterministic given (c, n_ref, seed).
    """

    if n_ref < 1:
        raise ValueError("n_ref must be at least 1")

    center = volume_cell_center(spec, c)
    if n_ref == 1:
        return center[None, :]

    rng = np.random.default_rng([seed, *c])
    fractions = rng.uniform(_REFERENCE_MARGIN, 1.0 - _REFERENCE_MARGIN, size=(n_ref - 1, 3))
    jittered = spec.lower + (np.asarray(c, dtype=np.float64) + fractions) * spec.cell
    return np.concatenate([center[None, :], jittered], axis=0)


def reference_point_grid(spec: VolumeSpec, n_ref: int, seed: int) -> np.ndarray:
    """(n_cells, n_ref, 3) reference points of every cell, flat index order"""

    return np.stack(
        [
            reference_points(spec, spec.coord_of(index), n_ref, seed)
            for index in range(spec.n_cells)
        ]
    )
