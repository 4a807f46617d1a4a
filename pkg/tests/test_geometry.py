import numpy as np
import pytest
from pydantic import ValidationError

from volumae.exceptions import DegenerateProjectionError
from volumae.geometry import (
    CameraModel,
    VolumeCoord,
    VolumeSpec,
    camera_ring,
    hit_masks,
    hit_views,
    point_to_volume_coord,
    project_point,
    reference_point_grid,
    reference_points,
    volume_cell_center,
)


@pytest.fixture
def camera() -> CameraModel:
    return CameraModel.looking_at_yaw(
        30.0, (1.0, -2.0, 1.5), width=64, height=48, horizontal_fov_deg=70.0
    )


def test_projection_round_trip(camera: CameraModel, rng):
    for _ in range(200):
        u, v = rng.uniform(0, camera.width), rng.uniform(0, camera.height)
        depth = rng.uniform(0.5, 40.0)

        point = camera.unproject(u, v, depth)
        projected = project_point(camera, point)

        assert projected == pytest.approx((u, v, depth), abs=1e-9)


def test_point_on_the_optical_axis_projects_to_the_principal_point(camera: CameraModel):
    yaw = np.deg2rad(30.0)
    point = np.array([1.0, -2.0, 1.5]) + 10.0 * np.array([np.cos(yaw), np.sin(yaw), 0.0])

    u, v, depth = project_point(camera, point)

    assert (u, v, depth) == pytest.approx((32.0, 24.0, 10.0))


def test_point_on_the_camera_plane_is_degenerate(camera: CameraModel):
    with pytest.raises(DegenerateProjectionError):
        project_point(camera, camera.center)


def test_invalid_matrices_are_rejected(camera: CameraModel):
    with pytest.raises(ValidationError):
        CameraModel(intrinsics=np.eye(3), extrinsics=camera.extrinsics, width=4, height=4)

    skewed = camera.extrinsics.copy()
    skewed[0, 0] *= 2.0
    with pytest.raises(ValidationError):
        CameraModel(intrinsics=camera.intrinsics, extrinsics=skewed, width=4, height=4)


def test_camera_dict_round_trip(camera: CameraModel):
    restored = CameraModel.from_dict(camera.to_dict())

    np.testing.assert_array_equal(restored.projection, camera.projection)
    assert (restored.width, restored.height) == (camera.width, camera.height)


def test_hit_views_matches_brute_force(rng):
    rig = camera_ring(6, height=1.6, image_size=(32, 64), horizontal_fov_deg=70.0)
    points = rng.uniform(-20.0, 20.0, size=(300, 3))

    masks = hit_masks(rig, points)

    for index, point in enumerate(points):
        expected = set()
        for view, cam in enumerate(rig):
            try:
                u, v, depth = project_point(cam, point)
            except DegenerateProjectionError:
                continue
            if depth > 0 and 0 <= u < cam.width and 0 <= v < cam.height:
                expected.add(view)
        assert hit_views(rig, point) == expected
        assert set(np.flatnonzero(masks[:, index])) == expected


def test_point_behind_every_camera_hits_nothing():
    rig = [CameraModel.looking_at_yaw(0.0, (0, 0, 0), 16, 16, 90.0)]

    assert hit_views(rig, (-5.0, 0.0, 0.0)) == set()


def test_camera_ring_spacing():
    rig = camera_ring(4, height=2.0, image_size=(8, 8), horizontal_fov_deg=60.0)

    forward = [cam.extrinsics[2, :3] for cam in rig]
    for first, second in zip(forward, forward[1:]):
        assert float(first @ second) == pytest.approx(0.0, abs=1e-12)
    for cam in rig:
        np.testing.assert_allclose(cam.center, [0.0, 0.0, 2.0], atol=1e-12)


def test_volume_grid_shape():
    spec = VolumeSpec()

    assert spec.grid_shape == (200, 200, 2)
    assert spec.as_bev().grid_shape == (200, 200, 1)


def test_volume_rejects_a_partial_cell():
    with pytest.raises(ValidationError):
        VolumeSpec(x_range=(0.0, 1.0), cell_size=(0.3, 0.5, 4.0))


def test_volume_partition(rng):
    spec = VolumeSpec(cell_size=(5.0, 5.0, 4.0))
    points = rng.uniform(spec.lower, spec.upper, size=(500, 3))

    for point in points:
        coord = point_to_volume_coord(spec, point)
        center = volume_cell_center(spec, coord)
        assert np.all(np.abs(point - center) <= spec.cell / 2 + 1e-12)


def test_volume_bounds_are_half_open():
    spec = VolumeSpec(
        x_range=(0.0, 2.0), y_range=(0.0, 2.0), z_range=(0.0, 1.0), cell_size=(1, 1, 1)
    )

    assert point_to_volume_coord(spec, (0.0, 0.0, 0.0)) == VolumeCoord(0, 0, 0)
    assert point_to_volume_coord(spec, (1.0, 1.999, 0.5)) == VolumeCoord(1, 1, 0)
    assert point_to_volume_coord(spec, (2.0, 0.5, 0.5)) is None
    assert point_to_volume_coord(spec, (0.5, -1e-9, 0.5)) is None


def test_flat_index_round_trip():
    spec = VolumeSpec(cell_size=(25.0, 25.0, 4.0))

    for index in range(spec.n_cells):
        assert spec.flat_index(spec.coord_of(index)) == index


def test_cell_centers_follow_flat_order():
    spec = VolumeSpec(cell_size=(25.0, 25.0, 4.0))

    centers = spec.cell_centers()

    for index in (0, 5, spec.n_cells - 1):
        np.testing.assert_array_equal(
            centers[index], volume_cell_center(spec, spec.coord_of(index))
        )


def test_reference_points_stay_in_their_cell():
    spec = VolumeSpec(cell_size=(25.0, 25.0, 4.0))
    coord = VolumeCoord(1, 2, 0)

    points = reference_points(spec, coord, 4, seed=3)

    np.testing.assert_array_equal(points[0], volume_cell_center(spec, coord))
    for point in points:
        assert point_to_volume_coord(spec, point) == coord
    np.testing.assert_array_equal(points, reference_points(spec, coord, 4, seed=3))
    assert reference_point_grid(spec, 4, seed=3).shape == (spec.n_cells, 4, 3)


def test_reference_points_need_one_point():
    with pytest.raises(ValueError):
        reference_points(VolumeSpec(), VolumeCoord(0, 0, 0), 0, seed=0)
