import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivevla import geodesy
from drivevla.errors import DegenerateOrigin

TOKYO = geodesy.geodetic_to_ecef(math.radians(35.681), math.radians(139.767), 40.0)

lat_st = st.floats(-1.4, 1.4)
lon_st = st.floats(-math.pi, math.pi)
offset_st = st.lists(st.floats(-5000, 5000), min_size=3, max_size=3)
angle_st = st.floats(-math.pi, math.pi)


def _pose(lat=0.6, lon=2.4, h=30.0, rpy=(0.0, 0.0, 0.0)):
    return geodesy.Pose(geodesy.geodetic_to_ecef(lat, lon, h), np.array(rpy), np.zeros(3), 0)


def test_geodetic_round_trip_known_point():
    lat, lon, h = geodesy.ecef_to_geodetic(TOKYO)
    assert lat == pytest.approx(math.radians(35.681), abs=1e-12)
    assert lon == pytest.approx(math.radians(139.767), abs=1e-12)
    assert h == pytest.approx(40.0, abs=1e-6)


def test_equator_prime_meridian_is_semi_major_axis():
    p = geodesy.geodetic_to_ecef(0.0, 0.0, 0.0)
    assert p.tolist() == [geodesy.WGS84_A, 0.0, 0.0]


def test_self_origin_is_zero():
    assert np.allclose(geodesy.ecef_to_ned(TOKYO, TOKYO), 0.0, atol=1e-12)


def test_point_along_the_ellipsoid_normal_is_straight_up():
    # hand oracle: raising the height by 100 m moves along the geodetic normal
    lat, lon = math.radians(35.681), math.radians(139.767)
    up = geodesy.geodetic_to_ecef(lat, lon, 140.0)
    assert np.allclose(geodesy.ecef_to_ned(up, TOKYO), [0.0, 0.0, -100.0], atol=1e-3)


def test_ned_axes_at_equator():
    origin = geodesy.geodetic_to_ecef(0.0, 0.0, 0.0)
    # north is +z, east is +y at (0, 0)
    assert np.allclose(geodesy.ecef_to_ned(origin + [0, 0, 10], origin), [10, 0, 0], atol=1e-9)
    assert np.allclose(geodesy.ecef_to_ned(origin + [0, 10, 0], origin), [0, 10, 0], atol=1e-9)


def test_degenerate_origin():
    with pytest.raises(DegenerateOrigin):
        geodesy.ecef_to_ned([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateOrigin):
        geodesy.ecef_to_ned([1.0, 2.0, 3.0], [np.nan, 0.0, 7e6])


@settings(max_examples=60, deadline=None)
@given(lat_st, lon_st, offset_st)
def test_ned_round_trip(lat, lon, off):
    origin = geodesy.geodetic_to_ecef(lat, lon, 100.0)
    p = origin + np.array(off)
    back = geodesy.ned_to_ecef(geodesy.ecef_to_ned(p, origin), origin)
    assert np.allclose(back, p, atol=1e-6)


def test_wrap_angle():
    assert geodesy.wrap_angle(math.pi) == pytest.approx(math.pi)
    assert geodesy.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert geodesy.wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert geodesy.wrap_angle(0.0) == 0.0


def test_ego_origin_maps_to_zero():
    ego = _pose(rpy=(0.01, -0.02, 1.3))
    out = geodesy.world_to_ego(ego.position, ego)
    assert np.allclose(out, 0.0, atol=1e-9)


def test_point_north_of_north_facing_ego_is_forward():
    ego = _pose(lat=0.7, lon=-1.2, rpy=(0.0, 0.0, 0.0))
    north = geodesy.ned_to_ecef([10.0, 0.0, 0.0], ego.position)
    assert np.allclose(geodesy.world_to_ego(north, ego), [[10.0, 0.0, 0.0]], atol=1e-6)


def test_ego_axes_left_and_up():
    # facing east: north is on the left, up is +z
    ego = _pose(rpy=(0.0, 0.0, math.pi / 2))
    north = geodesy.ned_to_ecef([5.0, 0.0, 0.0], ego.position)
    up = geodesy.ned_to_ecef([0.0, 0.0, -2.0], ego.position)
    assert np.allclose(geodesy.world_to_ego(north, ego), [[0.0, 5.0, 0.0]], atol=1e-6)
    assert np.allclose(geodesy.world_to_ego(up, ego), [[0.0, 0.0, 2.0]], atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(lat_st, lon_st, angle_st, st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
       st.lists(offset_st, min_size=2, max_size=2))
def test_world_to_ego_is_a_rigid_inverse_pair(lat, lon, yaw, roll, pitch, offs):
    ego = _pose(lat, lon, 50.0, (roll, pitch, yaw))
    pts = ego.position + np.array(offs)
    local = geodesy.world_to_ego(pts, ego)
    d_world = np.linalg.norm(pts[0] - pts[1])
    d_ego = np.linalg.norm(local[0] - local[1])
    assert abs(d_world - d_ego) <= 1e-9 * max(d_world, 1.0)
    assert np.allclose(geodesy.ego_to_world(local, ego), pts, atol=1e-6)


def test_batched_ego_matrices_match_single():
    rng = np.random.default_rng(1)
    poses = [_pose(rng.uniform(-1, 1), rng.uniform(-3, 3), 10.0, rng.uniform(-0.3, 0.3, 3))
             for _ in range(20)]
    batch = geodesy.ecef_to_ego_matrices([p.position for p in poses], [p.orientation_ned for p in poses])
    for m, p in zip(batch, poses):
        assert np.allclose(m, geodesy.ecef_to_ego_matrix(p), atol=1e-12)


def test_projection_reference_camera():
    cam = geodesy.reference_camera()
    plain = geodesy.CameraModel(cam.intrinsic)
    assert geodesy.project_to_image((0.0, 0.0, 10.0), plain) == (964.0, 604.0)
    u, v = geodesy.project_to_image((1.0, 0.0, 10.0), plain)
    assert u == pytest.approx(964.0 + 264.8) and v == pytest.approx(604.0)
    assert geodesy.project_to_image((0.0, 0.0, -3.0), plain) is None
    assert geodesy.project_to_image((0.0, 0.0, 0.1), plain) is None


def test_reference_extrinsic_puts_forward_points_in_view():
    cam = geodesy.reference_camera()
    u, v = geodesy.project_to_image((20.0, 0.0, 0.0), cam)
    assert 0 <= u <= 1928 and 0 <= v <= 1208


def test_camera_model_validation():
    k = np.eye(3)
    with pytest.raises(ValueError):
        geodesy.CameraModel(np.diag([-1.0, 1.0, 1.0]))
    bad = np.eye(4)
    bad[0, 0] = -1.0  # reflection
    with pytest.raises(ValueError):
        geodesy.CameraModel(k, bad)
