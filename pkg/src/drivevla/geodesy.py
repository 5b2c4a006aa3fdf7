"""Frame conversions between ECEF, local NED, the ego frame, and the camera image.

Conventions
-----------
* NED: north-east-down tangent plane on the WGS84 ellipsoid at an origin.
* Body: forward-right-down, rotated into NED by yaw (about down), then pitch,
  then roll.
* Ego frame: x forward, y left, z up, centred on the vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateOrigin

# WGS84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

MIN_DEPTH_M = 0.1
# the released calibration is float32-derived: det - 1 = -2.8e-9
ROTATION_DET_TOL = 1e-6

# body (forward-right-down) <-> ego (forward-left-up)
_FRD_TO_FLU = np.diag([1.0, -1.0, -1.0])


def geodetic_to_ecef(lat: float, lon: float, height: float) -> np.ndarray:
    """Latitude/longitude in radians, height in meters above the ellipsoid."""
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    t = (n + height) * math.cos(lat)
    return np.array([
        t * math.cos(lon),
        t * math.sin(lon),
        (n * (1.0 - WGS84_E2) + height) * sin_lat,
    ])


def ecef_to_geodetic(p) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in p)
    lon = math.atan2(y, x)
    r = math.hypot(x, y)
    lat = math.atan2(z, r * (1.0 - WGS84_E2))
    for _ in range(8):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        h = r * math.cos(lat) + z * sin_lat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        lat_next = math.atan2(z, r * (1.0 - WGS84_E2 * n / (n + h)))
        if abs(lat_next - lat) < 1e-15:
            lat = lat_next
            break
        lat = lat_next
    sin_lat = math.sin(lat)
    h = r * math.cos(lat) + z * sin_lat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return lat, lon, h


def _check_origin(origin) -> np.ndarray:
    o = np.asarray(origin, dtype=float)
    if not np.all(np.isfinite(o)) or np.linalg.norm(o) < 1e6:
        raise DegenerateOrigin(f"origin {o.tolist()} is not near the Earth's surface")
    return o


def ecef_to_ned_matrix(origin) -> np.ndarray:
    """Rotation taking ECEF difference vectors into NED at ``origin``."""
    lat, lon, _ = ecef_to_geodetic(_check_origin(origin))
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-sl * co, -sl * so, cl],
        [-so, co, 0.0],
        [-cl * co, -cl * so, -sl],
    ])


def ecef_to_ned(p, origin) -> np.ndarray:
    o = _check_origin(origin)
    return ecef_to_ned_matrix(o) @ (np.asarray(p, dtype=float) - o)


def ned_to_ecef(ned, origin) -> np.ndarray:
    o = _check_origin(origin)
    return o + ecef_to_ned_matrix(o).T @ np.asarray(ned, dtype=float)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def body_to_ned_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass
class Pose:
    """Vehicle pose at one instant."""

    position: np.ndarray
    orientation_ned: np.ndarray
    velocity_ecef: np.ndarray
    timestamp: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation_ned = np.asarray(self.orientation_ned, dtype=float)
        self.velocity_ecef = np.asarray(self.velocity_ecef, dtype=float)

    @property
    def yaw(self) -> float:
        return float(self.orientation_ned[2])


def ecef_to_ego_matrix(ego: Pose) -> np.ndarray:
    """Rotation taking ECEF difference vectors into the ego frame of ``ego``."""
    r_ned = ecef_to_ned_matrix(ego.position)
    roll, pitch, yaw = ego.orientation_ned
    r_body = body_to_ned_matrix(roll, pitch, yaw)
    return _FRD_TO_FLU @ r_body.T @ r_ned


def ecef_to_ego_matrices(positions, orientations) -> np.ndarray:
    """Vectorized :func:`ecef_to_ego_matrix` over (N, 3) positions and (N, 3) roll/pitch/yaw."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    ori = np.asarray(orientations, dtype=float).reshape(-1, 3)
    if len(pos) and (not np.all(np.isfinite(pos)) or np.linalg.norm(pos, axis=1).min() < 1e6):
        raise DegenerateOrigin("a position is not near the Earth's surface")
    x, y, z = pos.T
    lon = np.arctan2(y, x)
    r = np.hypot(x, y)
    lat = np.arctan2(z, r * (1.0 - WGS84_E2))
    for _ in range(8):
        sin_lat = np.sin(lat)
        w = np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        n = WGS84_A / w
        h = r * np.cos(lat) + z * sin_lat - WGS84_A * w
        lat = np.arctan2(z, r * (1.0 - WGS84_E2 * n / (n + h)))
    sl, cl, so, co = np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)
    zero = np.zeros_like(sl)
    r_ned = np.stack([
        np.stack([-sl * co, -sl * so, cl], axis=-1),
        np.stack([-so, co, zero], axis=-1),
        np.stack([-cl * co, -cl * so, -sl], axis=-1),
    ], axis=1)
    cr, sr = np.cos(ori[:, 0]), np.sin(ori[:, 0])
    cp, sp = np.cos(ori[:, 1]), np.sin(ori[:, 1])
    cy, sy = np.cos(ori[:, 2]), np.sin(ori[:, 2])
    # rows of (Rz Ry Rx)^T, i.e. NED -> body
    r_body_t = np.stack([
        np.stack([cy * cp, sy * cp, -sp], axis=-1),
        np.stack([cy * sp * sr - sy * cr, sy * sp * sr + cy * cr, cp * sr], axis=-1),
        np.stack([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr], axis=-1),
    ], axis=1)
    return _FRD_TO_FLU @ r_body_t @ r_ned


def world_to_ego(points, ego: Pose) -> np.ndarray:
    """Map ECEF points of shape (N, 3) into the ego frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rot = ecef_to_ego_matrix(ego)
    return (pts - ego.position) @ rot.T


def ego_to_world(points, ego: Pose) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rot = ecef_to_ego_matrix(ego)
    return pts @ rot + ego.position


@dataclass
class CameraModel:
    intrinsic: np.ndarray
    extrinsic: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=float).reshape(3, 3)
        self.extrinsic = np.asarray(self.extrinsic, dtype=float).reshape(4, 4)
        if self.intrinsic[0, 0] <= 0 or self.intrinsic[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        det = np.linalg.det(self.extrinsic[:3, :3])
        if abs(det - 1.0) > ROTATION_DET_TOL:
            raise ValueError(f"extrinsic rotation is not proper (det={det!r})")

    @classmethod
    def from_lists(cls, intrinsic: Sequence, extrinsic: Sequence) -> "CameraModel":
        return cls(np.array(intrinsic, dtype=float), np.array(extrinsic, dtype=float))

    def to_camera(self, p_ego) -> np.ndarray:
        p = np.asarray(p_ego, dtype=float)
        return self.extrinsic[:3, :3] @ p + self.extrinsic[:3, 3]


def project_to_image(p_ego, cam: CameraModel) -> Optional[tuple[float, float]]:
    """Pinhole projection; None when the point is within 0.1 m of the image plane or behind it."""
    pc = cam.to_camera(p_ego)
    if pc[2] <= MIN_DEPTH_M:
        return None
    k = cam.intrinsic
    u = k[0, 0] * pc[0] / pc[2] + k[0, 1] * pc[1] / pc[2] + k[0, 2]
    v = k[1, 1] * pc[1] / pc[2] + k[1, 2]
    return float(u), float(v)


# Camera calibration from the released example frame.
REFERENCE_INTRINSIC = [
    [2648.0, 0.0, 964.0],
    [0.0, 2648.0, 604.0],
    [0.0, 0.0, 1.0],
]
REFERENCE_EXTRINSIC = [
    [-0.015688330416257182, -0.9998769191404183, 0.00012959444326649344, 0.0],
    [-0.008260370686184616, 2.879912020664621e-21, -0.9999658837914467, 1.2200000286102295],
    [0.9998428078989188, -0.01568886620613436, -0.008259354077745229, 0.0],
    [0.0, 0.0, 0.0, 1.0],
]


def reference_camera() -> CameraModel:
    return CameraModel.from_lists(REFERENCE_INTRINSIC, REFERENCE_EXTRINSIC)
