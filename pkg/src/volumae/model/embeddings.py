from typing import List

import numpy as np

_MAX_PERIOD = 10000.0


def _axis_widths(dim: int, n_axes: int) -> List[int]:
    base, extra = divmod(dim, n_axes)
    return [base + (1 if axis < extra else 0) for axis in range(n_axes)]


def sinusoidal_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """
    Fixed sin/cos encoding of (N, k) positions into (N, dim) features.

    The channels are split between the k axes; within an axis channel 2i holds
    sin(p / 10000^(2i/d)) and channel 2i+1 the matching cos.
    """

    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim == 1:
        positions = positions[:, None]

    parts = []
    for axis, width in enumerate(_axis_widths(dim, positions.shape[1])):
        channel = np.arange(width)
        frequency = _MAX_PERIOD ** (-(2 * (channel // 2)) / max(width, 1))
        angles = positions[:, axis : axis + 1] * frequency
        parts.append(np.where(channel % 2 == 0, np.sin(angles), np.cos(angles)))
    return np.concatenate(parts, axis=1)


def patch_position_encoding(grid_height: int, grid_width: int, dim: int) -> np.ndarray:
    """(grid_height * grid_width, dim) encoding of row-major patch positions"""

    rows, cols = np.meshgrid(np.arange(grid_height), np.arange(grid_width), indexing="ij")
    return sinusoidal_encoding(np.stack([rows.ravel(), cols.ravel()], axis=1), dim)


def cell_position_encoding(coords: np.ndarray, dim: int) -> np.ndarray:
    """Encoding of integer volume coordinates (N, 3)"""

    return sinusoidal_encoding(np.asarray(coords, dtype=np.float64).reshape(-1, 3), dim)
