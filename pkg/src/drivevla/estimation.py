"""Loosely coupled GNSS/IMU Kalman filter and future-trajectory annotation.

State vector (7): ECEF position (3), ECEF velocity (3), NED yaw (1).

The IMU is read in the device frame (x forward, y left, z up) with gravity
already removed. Device accelerations are rotated to NED by the yaw state and
then to ECEF through the tangent plane anchored at the first valid fix; over a
30 s scene the plane's tilt against the local one is below 1e-4 rad.
"""

from __future__ import annotations

import bisect
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geodesy
from .errors import InvalidDt, InvalidFix, NoGnss
from .ingest import GnssFix, ImuSample, SensorLog

MAX_DT = 0.25
TRAJECTORY_LENGTH = 60
HEADING_INIT_WINDOW_MS = 1000
MIN_HEADING_DISPLACEMENT = 1.0

@dataclass
class NoiseConfig:
    gnss_sigma: float = 1.5
    accel_sigma: float = 0.3
    gyro_sigma: float = 0.01
    initial_pos_sigma: float = 5.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FilterState:
    position_ecef: np.ndarray
    velocity_ecef: np.ndarray
    yaw_ned: float
    covariance: np.ndarray
    # NED -> ECEF rotation of the anchoring tangent plane
    ned_to_ecef: np.ndarray = field(default_factory=lambda: np.eye(3))

    def copy(self) -> "FilterState":
        return replace(self, position_ecef=self.position_ecef.copy(),
                       velocity_ecef=self.velocity_ecef.copy(),
                       covariance=self.covariance.copy())

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity_ecef))


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


@functools.lru_cache(maxsize=64)
def _transition_template(dt: float) -> np.ndarray:
    f = np.eye(7)
    f[0:3, 3:6] = np.eye(3) * dt
    return f


@functools.lru_cache(maxsize=64)
def _process_noise(dt: float, accel_sigma: float, gyro_sigma: float) -> np.ndarray:
    """Discrete white-noise acceleration on position/velocity, random walk on yaw."""
    dt2 = 0.5 * dt * dt
    qa = accel_sigma ** 2
    q = np.zeros((7, 7))
    q[0:3, 0:3] = np.eye(3) * qa * dt2 * dt2
    q[0:3, 3:6] = np.eye(3) * qa * dt2 * dt
    q[3:6, 0:3] = q[0:3, 3:6]
    q[3:6, 3:6] = np.eye(3) * qa * dt * dt
    q[6, 6] = (gyro_sigma * dt) ** 2
    q.flags.writeable = False
    return q


def predict(state: FilterState, imu: ImuSample | None, dt: float,
            cfg: NoiseConfig | None = None) -> FilterState:
    """Propagate the state over ``dt`` seconds holding the IMU sample constant."""
    if not (0.0 < dt <= MAX_DT):
        raise InvalidDt(f"dt={dt!r} outside (0, {MAX_DT}]")
    cfg = cfg or NoiseConfig()
    if imu is None:
        fwd = rgt = down = 0.0
        yaw_rate = 0.0
    else:
        fwd, left, up = imu.accel_device.tolist()
        rgt, down = -left, -up
        # device z points up, NED yaw turns about down
        yaw_rate = -float(imu.gyro_device[2])

    c, s = math.cos(state.yaw_ned), math.sin(state.yaw_ned)
    r_ne = state.ned_to_ecef
    acc = r_ne @ np.array([c * fwd - s * rgt, s * fwd + c * rgt, down])
    dacc = r_ne @ np.array([-s * fwd - c * rgt, c * fwd - s * rgt, 0.0])

    dt2 = 0.5 * dt * dt
    pos = state.position_ecef + state.velocity_ecef * dt + acc * dt2
    vel = state.velocity_ecef + acc * dt
    yaw = geodesy.wrap_angle(state.yaw_ned + yaw_rate * dt)

    f = _transition_template(dt).copy()
    f[0:3, 6] = dacc * dt2
    f[3:6, 6] = dacc * dt
    cov = f @ state.covariance @ f.T
    cov += _process_noise(dt, cfg.accel_sigma, cfg.gyro_sigma)
    cov = _symmetrize(cov)
    return FilterState(pos, vel, yaw, cov, r_ne)


_I7 = np.eye(7)


def update_gnss(state: FilterState, fix: GnssFix, cfg: NoiseConfig | None = None) -> FilterState:
    """Linear position update (Joseph form)."""
    if not fix.fix_valid:
        raise InvalidFix(f"fix at {fix.timestamp} is flagged invalid")
    cfg = cfg or NoiseConfig()
    r = cfg.gnss_sigma ** 2
    p = state.covariance
    # H selects the position block, so H P H^T and P H^T are plain slices
    s = p[0:3, 0:3] + np.eye(3) * r
    k = np.linalg.solve(s, p[0:3, :]).T
    innovation = np.asarray(fix.position_ecef, dtype=float) - state.position_ecef
    dx = k @ innovation
    ikh = _I7.copy()
    ikh[:, 0:3] -= k
    cov = ikh @ p @ ikh.T
    cov += r * (k @ k.T)
    cov = _symmetrize(cov)
    return FilterState(
        state.position_ecef + dx[0:3],
        state.velocity_ecef + dx[3:6],
        geodesy.wrap_angle(state.yaw_ned + dx[6]),
        cov,
        state.ned_to_ecef,
    )


def _to_pose(state: FilterState, timestamp: int) -> geodesy.Pose:
    return geodesy.Pose(state.position_ecef.copy(), np.array([0.0, 0.0, state.yaw_ned]),
                        state.velocity_ecef.copy(), timestamp)


def _initial_state(sensor_log: SensorLog, fixes: list[GnssFix], cfg: NoiseConfig) -> FilterState:
    first = fixes[0]
    t0 = first.timestamp
    r_en = geodesy.ecef_to_ned_matrix(first.position_ecef)
    window = [f for f in fixes[1:] if f.timestamp - t0 <= HEADING_INIT_WINDOW_MS]

    yaw, yaw_var = 0.0, math.pi ** 2
    chord_vel = np.zeros(3)
    if window:
        last = window[-1]
        d = r_en @ (last.position_ecef - first.position_ecef)
        span = (last.timestamp - t0) / 1000.0
        chord_vel = d / span
        if math.hypot(d[0], d[1]) >= MIN_HEADING_DISPLACEMENT:
            # the chord points along the mid-window heading; back out half the gyro turn
            turn = 0.0
            imu = sensor_log.imu
            for j, s in enumerate(imu):
                if t0 <= s.timestamp < last.timestamp:
                    nxt = imu[j + 1].timestamp if j + 1 < len(imu) else last.timestamp
                    turn += -float(s.gyro_device[2]) * (min(nxt, last.timestamp) - s.timestamp) / 1000.0
            yaw = geodesy.wrap_angle(math.atan2(d[1], d[0]) - 0.5 * turn)
            yaw_var = (2.0 * cfg.gnss_sigma / math.hypot(d[0], d[1])) ** 2

    speed = None
    if sensor_log.can:
        times = [c.timestamp for c in sensor_log.can]
        i = bisect.bisect_left(times, t0)
        near = [sensor_log.can[j] for j in (i - 1, i) if 0 <= j < len(times)]
        if near:
            speed = min(near, key=lambda c: abs(c.timestamp - t0)).v_ego
    if speed is not None:
        vel_ned = np.array([speed * math.cos(yaw), speed * math.sin(yaw), 0.0])
        vel_var = 0.5 ** 2
    else:
        vel_ned = chord_vel
        vel_var = (2.0 * cfg.gnss_sigma) ** 2

    cov = np.zeros((7, 7))
    # the state starts on a fix, so it is never less certain than one
    cov[0:3, 0:3] = np.eye(3) * min(cfg.initial_pos_sigma, cfg.gnss_sigma) ** 2
    cov[3:6, 3:6] = np.eye(3) * vel_var
    cov[6, 6] = yaw_var
    return FilterState(first.position_ecef.copy(), r_en.T @ vel_ned, yaw, cov, r_en.T)


def _propagate(state: FilterState, imu: ImuSample | None, dt: float, cfg: NoiseConfig) -> FilterState:
    while dt > 0:
        step = min(dt, MAX_DT)
        state = predict(state, imu, step, cfg)
        dt -= step
    return state


def estimate_path(sensor_log: SensorLog, cfg: NoiseConfig | None = None) -> list[geodesy.Pose]:
    """Forward Kalman filter sampled at every camera frame."""
    cfg = cfg or NoiseConfig()
    fixes = [g for g in sensor_log.gnss if g.fix_valid]
    if not fixes:
        raise NoGnss(f"recording {sensor_log.recording_id!r} has no valid GNSS fix")
    t0 = fixes[0].timestamp
    state = _initial_state(sensor_log, fixes, cfg)

    # (time, order, payload): IMU input first, then measurement, then sampling
    events: list[tuple[int, int, int, object]] = []
    events += [(s.timestamp, 0, i, s) for i, s in enumerate(sensor_log.imu) if s.timestamp >= t0]
    events += [(f.timestamp, 1, i, f) for i, f in enumerate(fixes[1:])]
    events += [(fr.timestamp, 2, i, fr) for i, fr in enumerate(sensor_log.frames) if fr.timestamp >= t0]
    events.sort(key=lambda e: e[:3])

    poses: list[geodesy.Pose] = []
    for fr in sensor_log.frames:
        if fr.timestamp >= t0:
            break
        back = (t0 - fr.timestamp) / 1000.0
        early = state.copy()
        early.position_ecef = state.position_ecef - state.velocity_ecef * back
        poses.append(_to_pose(early, fr.timestamp))

    t_cur = t0
    current_imu: ImuSample | None = None
    for t, kind, _, payload in events:
        if t > t_cur:
            state = _propagate(state, current_imu, (t - t_cur) / 1000.0, cfg)
            t_cur = t
        if kind == 0:
            current_imu = payload
        elif kind == 1:
            state = update_gnss(state, payload, cfg)
        else:
            poses.append(_to_pose(state, payload.timestamp))
    return poses


@dataclass
class EgoTrajectory:
    points: np.ndarray
    trajectory_count: int
    complete: bool

    @classmethod
    def from_points(cls, points, horizon: int = TRAJECTORY_LENGTH) -> "EgoTrajectory":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(pts, len(pts), len(pts) == horizon)


def annotate_future(poses: list[geodesy.Pose], horizon: int = TRAJECTORY_LENGTH) -> list[EgoTrajectory]:
    """For each frame, the positions of frames i .. i+horizon-1 in frame i's ego frame.

    Point 0 is the vehicle itself (the origin); frames near the end of the path
    carry the available prefix and are marked incomplete.
    """
    if not poses:
        return []
    positions = np.array([p.position for p in poses])
    orientations = np.array([p.orientation_ned for p in poses])
    rots = geodesy.ecef_to_ego_matrices(positions, orientations)
    out = []
    for i in range(len(poses)):
        pts = (positions[i:i + horizon] - positions[i]) @ rots[i].T
        out.append(EgoTrajectory.from_points(pts, horizon))
    return out
