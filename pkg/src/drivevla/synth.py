"""Labelled synthetic recordings: ground-truth kinematics plus injected sensor faults.

Truth is integrated at the IMU rate with piecewise-constant acceleration, so
``p[k+1] = p[k] + (v[k] + v[k+1]) / 2 * dt`` holds exactly and the filter's
motion model reproduces it without discretisation error.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import geodesy
from .ingest import (CameraBox, CanFrame, FrameIndex, GnssFix, ImuSample, RadarTarget, SensorLog,
                     TrafficLightObs, serialize_stream)

IMU_RATE_HZ = 100
FRAME_RATE_HZ = 20
BASE_TIMESTAMP_MS = 1_657_248_000_000
WHEELBASE_M = 2.7
STEERING_RATIO = 15.0
# around Tokyo station
DEFAULT_ORIGIN = (math.radians(35.681), math.radians(139.767), 40.0)

KINDS = ("straight", "constant_turn", "stop_and_go", "lane_change")


@dataclass
class MotionProfile:
    kind: str = "straight"
    speed: float = 10.0
    yaw_rate: float = 0.0  # rad/s, positive = left
    duration: float = 30.0
    seed: int = 0
    speed_wobble: float = 0.0  # amplitude of a slow speed oscillation, m/s
    initial_yaw: float = 0.0  # NED yaw at t=0
    lane_offset: float = 3.5
    lead_vehicle: bool = False
    origin: tuple[float, float, float] = DEFAULT_ORIGIN
    start_ms: int = BASE_TIMESTAMP_MS
    imu_rate_hz: int = IMU_RATE_HZ

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.imu_rate_hz < FRAME_RATE_HZ or self.imu_rate_hz % FRAME_RATE_HZ:
            raise ValueError("imu_rate_hz must be a multiple of the frame rate")
        if self.duration <= 0 or self.speed < 0:
            raise ValueError("duration must be positive and speed non-negative")


@dataclass
class Truth:
    """Ground truth at the IMU rate plus per-frame CAN and perception streams."""

    profile: MotionProfile
    t: np.ndarray  # seconds, IMU grid
    pos_ned: np.ndarray
    vel_ned: np.ndarray
    acc_ned: np.ndarray  # held over [t_k, t_k+1)
    yaw: np.ndarray  # NED
    yaw_rate: np.ndarray  # left-positive, held over [t_k, t_k+1)
    speed: np.ndarray
    origin_ecef: np.ndarray
    ned_to_ecef: np.ndarray
    can: list[CanFrame]
    frames: list[FrameIndex]
    traffic_lights: list[TrafficLightObs] = field(default_factory=list)
    radar: list[RadarTarget] = field(default_factory=list)
    boxes: list[CameraBox] = field(default_factory=list)
    recording_id: str = "synthetic"

    @property
    def frame_step(self) -> int:
        return self.profile.imu_rate_hz // FRAME_RATE_HZ

    def timestamps_ms(self) -> np.ndarray:
        return self.profile.start_ms + np.round(self.t * 1000).astype(np.int64)

    def position_ecef(self, k=slice(None)) -> np.ndarray:
        return self.origin_ecef + self.pos_ned[k] @ self.ned_to_ecef.T

    def frame_indices(self) -> np.ndarray:
        return np.arange(0, len(self.t), self.frame_step)[: len(self.frames)]

    def frame_poses(self) -> list[geodesy.Pose]:
        ts = self.timestamps_ms()
        out = []
        for k in self.frame_indices():
            out.append(geodesy.Pose(self.position_ecef(k), np.array([0.0, 0.0, self.yaw[k]]),
                                    self.ned_to_ecef @ self.vel_ned[k], int(ts[k])))
        return out


def _speed_profile(p: MotionProfile, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Speed at each grid time, plus the stop-and-go cycle phase (seconds) for perception."""
    if p.kind == "stop_and_go":
        # 10 s cycle: accelerate 3 s, cruise 2 s, brake 3 s, stand 2 s
        phase = np.mod(t, 10.0)
        v = np.where(phase < 3.0, p.speed * phase / 3.0,
             np.where(phase < 5.0, p.speed,
             np.where(phase < 8.0, p.speed * (8.0 - phase) / 3.0, 0.0)))
        return v, phase
    v = np.full_like(t, p.speed)
    if p.speed_wobble:
        v = v + p.speed_wobble * np.sin(2.0 * math.pi * t / 15.0)
    return np.maximum(v, 0.0), np.zeros_like(t)


def _yaw_rate_profile(p: MotionProfile, t: np.ndarray) -> np.ndarray:
    if p.kind == "constant_turn":
        return np.full_like(t, p.yaw_rate)
    if p.kind == "lane_change":
        # one sine period of yaw rate from t=10 s; heading returns to its start
        period, start = 4.0, 10.0
        speed = max(p.speed, 1.0)
        peak = p.lane_offset * 2.0 * math.pi / (speed * period * period)
        inside = (t >= start) & (t < start + period)
        return np.where(inside, peak * np.sin(2.0 * math.pi * (t - start) / period), 0.0)
    return np.zeros_like(t)


def steering_from_yaw_rate(yaw_rate: float, speed: float) -> float:
    """Steering-wheel angle (deg) for a kinematic bicycle model."""
    if speed < 0.1:
        return 0.0
    return math.degrees(math.atan(WHEELBASE_M * yaw_rate / speed)) * STEERING_RATIO


def gen_truth(profile: MotionProfile, recording_id: str = "synthetic") -> Truth:
    dt = 1.0 / profile.imu_rate_hz
    n = int(round(profile.duration * profile.imu_rate_hz))
    t = np.arange(n + 1) * dt
    speed, phase = _speed_profile(profile, t)
    omega = _yaw_rate_profile(profile, t)

    # NED yaw grows clockwise; left-positive rate enters negated
    yaw = profile.initial_yaw + np.concatenate([[0.0], np.cumsum(-omega[:-1] * dt)])
    yaw = np.mod(yaw + math.pi, 2.0 * math.pi) - math.pi
    vel = np.stack([speed * np.cos(yaw), speed * np.sin(yaw), np.zeros_like(t)], axis=1)
    acc = np.zeros_like(vel)
    acc[:-1] = (vel[1:] - vel[:-1]) / dt
    pos = np.zeros_like(vel)
    pos[1:] = np.cumsum(vel[:-1] * dt + 0.5 * acc[:-1] * dt * dt, axis=0)

    origin = geodesy.geodetic_to_ecef(*profile.origin)
    ned_to_ecef = geodesy.ecef_to_ned_matrix(origin).T

    step = profile.imu_rate_hz // FRAME_RATE_HZ
    n_frames = int(round(profile.duration * FRAME_RATE_HZ))
    ts = profile.start_ms + np.round(t * 1000).astype(np.int64)
    long_acc = np.zeros_like(t)
    long_acc[:-1] = (speed[1:] - speed[:-1]) / dt
    long_acc[-1] = long_acc[-2] if n > 0 else 0.0

    frames, can = [], []
    for f in range(n_frames):
        k = f * step
        frames.append(FrameIndex(f, int(ts[k]), f"images/{recording_id}/{f:04d}.png"))
        a = float(long_acc[k])
        blink_left, blink_right = _blinkers(profile, t[k])
        can.append(CanFrame(
            timestamp=int(ts[k]), v_ego=float(speed[k]), v_ego_raw=float(speed[k]), a_ego=a,
            steering_angle=steering_from_yaw_rate(float(omega[k]), float(speed[k])),
            steering_torque=0.0,
            brake=min(1.0, max(0.0, -a / 5.0)), brake_pressed=a < -0.3,
            gas=min(1.0, max(0.0, a / 3.0)) if a > 0 else (0.15 if speed[k] > 0.1 else 0.0),
            gas_pressed=a > 0.1,
            door_open=False, seatbelt_unlatched=False, gear="drive",
            left_blinker=blink_left, right_blinker=blink_right,
        ))

    truth = Truth(profile, t, pos, vel, acc, yaw, omega, speed, origin, ned_to_ecef, can, frames,
                  recording_id=recording_id)
    _add_perception(truth, phase)
    return truth


def _blinkers(p: MotionProfile, t: float) -> tuple[bool, bool]:
    if p.kind == "lane_change":
        on = 8.0 <= t < 14.0
        left = p.lane_offset > 0
        return on and left, on and not left
    if p.kind == "constant_turn" and abs(p.yaw_rate) >= 0.05:
        return p.yaw_rate > 0, p.yaw_rate < 0
    return False, False


def _add_perception(truth: Truth, phase: np.ndarray) -> None:
    p = truth.profile
    cam = geodesy.reference_camera()
    step = truth.frame_step
    if p.kind == "stop_and_go":
        for fr in truth.frames:
            ph = phase[fr.frame_id * step]
            state = "red" if ph >= 5.0 else "green"
            truth.traffic_lights.append(TrafficLightObs(fr.frame_id, state, (900.0, 200.0, 930.0, 280.0),
                                                        None, fr.timestamp))
    if not p.lead_vehicle:
        return
    gap0 = 25.0
    for fr in truth.frames:
        k = fr.frame_id * step
        # lead keeps a speed-dependent gap that breathes slowly
        gap = gap0 + 3.0 * math.sin(2.0 * math.pi * truth.t[k] / 20.0)
        gap_rate = 3.0 * 2.0 * math.pi / 20.0 * math.cos(2.0 * math.pi * truth.t[k] / 20.0)
        truth.radar.append(RadarTarget(fr.timestamp, gap, gap_rate, 0.0))
        # an out-of-lane distractor
        truth.radar.append(RadarTarget(fr.timestamp, 15.0, -1.0, math.atan2(4.0, 15.0)))
        uv = geodesy.project_to_image((gap, 0.0, 0.5), cam)
        if uv is not None:
            u, v = uv
            half = 1.8 * cam.intrinsic[0, 0] / gap / 2.0
            truth.boxes.append(CameraBox(fr.frame_id, (u - half, v - half, u + half, v + half),
                                         "car", fr.timestamp))


@dataclass
class CorruptionSpec:
    gnss_sigma: float = 0.0
    imu_accel_sigma: float = 0.0
    gnss_dropout: list[tuple[float, float]] = field(default_factory=list)
    jump_injections: list[tuple[float, float]] = field(default_factory=list)
    # (start s, end s, amplitude m, frequency Hz)
    vibration_injections: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.gnss_sigma < 0 or self.imu_accel_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        for inj in self.vibration_injections:
            if inj[2] < 0:
                raise ValueError("vibration amplitude must be non-negative")


@dataclass
class FaultLabels:
    jump_frames: list[int] = field(default_factory=list)
    vibration_frames: list[int] = field(default_factory=list)
    dropout_frames: list[int] = field(default_factory=list)

    @property
    def has_jump(self) -> bool:
        return bool(self.jump_frames)

    @property
    def has_vibration(self) -> bool:
        return bool(self.vibration_frames)


def corrupt(truth: Truth, spec: CorruptionSpec, seed: int = 0,
            gnss_rate_hz: int = FRAME_RATE_HZ) -> tuple[SensorLog, FaultLabels]:
    """Turn ground truth into a sensor log with seeded noise and injected faults."""
    rng = np.random.default_rng(seed)
    ts = truth.timestamps_ms()
    t = truth.t

    m = len(t) - 1
    c, s = np.cos(truth.yaw[:m]), np.sin(truth.yaw[:m])
    a = truth.acc_ned[:m]
    # NED -> forward-right-down -> forward-left-up
    acc_flu = np.stack([c * a[:, 0] + s * a[:, 1], s * a[:, 0] - c * a[:, 1], -a[:, 2]], axis=1)
    if spec.imu_accel_sigma:
        acc_flu = acc_flu + rng.normal(0.0, spec.imu_accel_sigma, acc_flu.shape)
    gyro = np.zeros((m, 3))
    gyro[:, 2] = truth.yaw_rate[:m]
    imu = [ImuSample(int(ts[k]), acc_flu[k], gyro[k]) for k in range(m)]

    labels = FaultLabels()
    gnss_step = truth.profile.imu_rate_hz // gnss_rate_hz
    frame_step = truth.frame_step
    gnss = []
    offsets = np.zeros((len(t), 3))
    for k in range(0, len(t), gnss_step):
        lateral = np.array([-math.sin(truth.yaw[k]), math.cos(truth.yaw[k]), 0.0])
        for when, disp in spec.jump_injections:
            if t[k] >= when:
                offsets[k] += lateral * disp
        for start, end, amp, freq in spec.vibration_injections:
            if start <= t[k] <= end:
                offsets[k] += lateral * amp * math.cos(2.0 * math.pi * freq * (t[k] - start))
    last_k = (len(truth.frames) - 1) * frame_step
    for k in range(0, last_k + 1, gnss_step):
        ned = truth.pos_ned[k] + offsets[k]
        if spec.gnss_sigma:
            ned = ned + rng.normal(0.0, spec.gnss_sigma, 3)
        pos = truth.origin_ecef + truth.ned_to_ecef @ ned
        valid = not any(a <= t[k] < b for a, b in spec.gnss_dropout)
        gnss.append(GnssFix(int(ts[k]), pos, valid))

    frame_t = np.array([fr.frame_id / FRAME_RATE_HZ for fr in truth.frames])
    for when, _ in spec.jump_injections:
        idx = int(np.searchsorted(frame_t, when - 1e-9))
        if idx < len(truth.frames):
            labels.jump_frames.append(idx)
    for start, end, _, _ in spec.vibration_injections:
        labels.vibration_frames += [i for i, ft in enumerate(frame_t) if start - 1e-9 <= ft <= end + 1e-9]
    for a, b in spec.gnss_dropout:
        labels.dropout_frames += [i for i, ft in enumerate(frame_t) if a - 1e-9 <= ft < b - 1e-9]
    labels.jump_frames = sorted(set(labels.jump_frames))
    labels.vibration_frames = sorted(set(labels.vibration_frames))
    labels.dropout_frames = sorted(set(labels.dropout_frames))

    sensor_log = SensorLog(
        can=list(truth.can), gnss=gnss, imu=imu, frames=list(truth.frames),
        traffic_lights=list(truth.traffic_lights), radar=list(truth.radar), boxes=list(truth.boxes),
        camera=geodesy.reference_camera(), recording_id=truth.recording_id,
    )
    return sensor_log, labels


def write_recording(sensor_log: SensorLog, out_dir: str | os.PathLike) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name in ("can", "gnss", "imu", "frames", "traffic_lights", "radar", "boxes"):
        (root / f"{name}.jsonl").write_text(serialize_stream(getattr(sensor_log, name)))
    cam = sensor_log.camera or geodesy.reference_camera()
    calib = {"intrinsic_matrix": cam.intrinsic.tolist(), "extrinsic_matrix": cam.extrinsic.tolist()}
    (root / "calibration.json").write_text(json.dumps(calib) + "\n")
    return root


def write_truth(truth: Truth, labels: FaultLabels, path: str | os.PathLike) -> None:
    ts = truth.timestamps_ms()
    lines = []
    for fr, k in zip(truth.frames, truth.frame_indices()):
        lines.append(json.dumps({
            "frame_id": fr.frame_id,
            "timestamp": int(ts[k]),
            "position_ecef": truth.position_ecef(k).tolist(),
            "velocity_ecef": (truth.ned_to_ecef @ truth.vel_ned[k]).tolist(),
            "yaw_ned": float(truth.yaw[k]),
            "jump": fr.frame_id in labels.jump_frames,
            "vibration": fr.frame_id in labels.vibration_frames,
        }))
    Path(path).write_text("\n".join(lines) + "\n")


DEFAULT_MIX = {"straight": 0.4, "constant_turn": 0.2, "stop_and_go": 0.2, "lane_change": 0.2}


def _profile_for(kind: str, rng: np.random.Generator, start_ms: int) -> MotionProfile:
    if kind == "straight":
        return MotionProfile("straight", speed=float(rng.uniform(5.0, 25.0)),
                             speed_wobble=float(rng.uniform(0.0, 1.0)), start_ms=start_ms,
                             initial_yaw=float(rng.uniform(-math.pi, math.pi)),
                             lead_vehicle=bool(rng.random() < 0.5))
    if kind == "constant_turn":
        speed = float(rng.uniform(4.0, 10.0))
        rate = float(rng.uniform(0.05, 0.25)) * (1 if rng.random() < 0.5 else -1)
        return MotionProfile("constant_turn", speed=speed, yaw_rate=rate, start_ms=start_ms,
                             initial_yaw=float(rng.uniform(-math.pi, math.pi)))
    if kind == "stop_and_go":
        return MotionProfile("stop_and_go", speed=float(rng.uniform(6.0, 14.0)), start_ms=start_ms,
                             initial_yaw=float(rng.uniform(-math.pi, math.pi)), lead_vehicle=True)
    return MotionProfile("lane_change", speed=float(rng.uniform(10.0, 25.0)), start_ms=start_ms,
                         lane_offset=3.5 if rng.random() < 0.5 else -3.5,
                         initial_yaw=float(rng.uniform(-math.pi, math.pi)))


@dataclass
class SceneSample:
    truth: Truth
    sensor_log: SensorLog
    labels: FaultLabels
    entry: dict


def iter_corpus(n_scenes: int, profile_mix: Optional[dict] = None,
                spec: Optional[CorruptionSpec] = None, seed: int = 0, jump_fraction: float = 0.0,
                vibration_fraction: float = 0.0, vibration_amplitude: float = 0.2,
                jump_displacement: float = 5.0, imu_rate_hz: int = IMU_RATE_HZ):
    """Yield one :class:`SceneSample` per 30 s recording, in memory.

    Each scene draws from its own generator seeded by (seed, index), so output
    does not depend on generation order. Fault injections go to exactly
    round(fraction * n) scenes picked by the corpus seed; jump and vibration
    scenes are disjoint.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    spec = spec or CorruptionSpec()
    mix = profile_mix or DEFAULT_MIX
    kinds = sorted(mix)
    probs = np.array([mix[k] for k in kinds], dtype=float)
    probs /= probs.sum()

    order = np.random.default_rng(seed).permutation(n_scenes)
    n_jump = int(round(jump_fraction * n_scenes))
    n_vib = int(round(vibration_fraction * n_scenes))
    jump_set = set(order[:n_jump].tolist())
    vib_set = set(order[n_jump:n_jump + n_vib].tolist())

    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        rec_id = f"rec_{i:05d}"
        profile = replace(_profile_for(kind, rng, BASE_TIMESTAMP_MS + i * 3_600_000), imu_rate_hz=imu_rate_hz)
        truth = gen_truth(profile, rec_id)
        scene_spec = CorruptionSpec(spec.gnss_sigma, spec.imu_accel_sigma, list(spec.gnss_dropout),
                                    list(spec.jump_injections), list(spec.vibration_injections))
        if i in jump_set:
            scene_spec.jump_injections.append((float(rng.uniform(3.0, 25.0)), jump_displacement))
        if i in vib_set:
            # start on a frame instant so the 10 Hz sway is sampled at its crests
            start = int(rng.integers(60, 400)) / FRAME_RATE_HZ
            scene_spec.vibration_injections.append((start, start + 5.0, vibration_amplitude, 10.0))
        sensor_log, labels = corrupt(truth, scene_spec, seed=int(rng.integers(2**31)))
        entry = {
            "recording_id": rec_id,
            "kind": kind,
            "profile": {k: v for k, v in asdict(profile).items() if k != "origin"},
            "jump": labels.has_jump,
            "vibration": labels.has_vibration,
            "jump_frames": labels.jump_frames,
            "vibration_frames": labels.vibration_frames,
        }
        yield SceneSample(truth, sensor_log, labels, entry)


def gen_corpus(out_dir: str | os.PathLike, n_scenes: int, profile_mix: Optional[dict] = None,
               spec: Optional[CorruptionSpec] = None, seed: int = 0, jump_fraction: float = 0.0,
               vibration_fraction: float = 0.0, vibration_amplitude: float = 0.2,
               jump_displacement: float = 5.0, placeholder_images: bool = False,
               imu_rate_hz: int = IMU_RATE_HZ) -> Path:
    """Write recordings with ``truth.jsonl`` sidecars plus a ``corpus.json`` summary."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in iter_corpus(n_scenes, profile_mix, spec, seed, jump_fraction, vibration_fraction,
                              vibration_amplitude, jump_displacement, imu_rate_hz):
        rec_id = sample.entry["recording_id"]
        rec_dir = write_recording(sample.sensor_log, root / rec_id)
        write_truth(sample.truth, sample.labels, rec_dir / "truth.jsonl")
        if placeholder_images:
            (root / "images" / rec_id).mkdir(parents=True, exist_ok=True)
            for fr in sample.truth.frames:
                (root / fr.image_path).touch()
        entries.append(sample.entry)
    summary = {
        "seed": seed,
        "n_scenes": n_scenes,
        "hours": sum(e["profile"]["duration"] for e in entries) / 3600.0,
        "recordings": entries,
    }
    (root / "corpus.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return root
