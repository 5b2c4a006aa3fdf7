"""Per-frame dataset records, their JSONL form, corpus statistics and overlay geometry.

Record keys follow the released vehicle-state table verbatim, mixed naming
included (``vEgo`` next to ``trajectory_count``).
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geodesy
from .artifacts import atomic_write_text
from .errors import FrameMismatch, MissingCamera, SchemaViolation
from .estimation import EgoTrajectory, TRAJECTORY_LENGTH
from .ingest import AlignedFrame

FPS = 20
FRAMES_PER_HOUR = FPS * 3600

SPEED_EDGES_KMH = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
STEERING_EDGES_DEG = (-90.0, -45.0, -15.0, -5.0, 5.0, 15.0, 45.0, 90.0)

# key -> kind; order is the released table's
SCHEMA: dict[str, str] = {
    "frame_id": "int",
    "image_path": "str",
    "vEgo": "float",
    "vEgoRaw": "float",
    "aEgo": "float",
    "steeringAngleDeg": "float",
    "steeringTorque": "float",
    "brake": "float",
    "brakePressed": "bool",
    "gas": "float",
    "gasPressed": "bool",
    "doorOpen": "bool",
    "seatbeltUnlatched": "bool",
    "gearShifter": "str",
    "leftBlinker": "bool",
    "rightBlinker": "bool",
    "orientations_calib": "vec3?",
    "orientations_ecef": "vec3?",
    "orientations_ned": "vec3?",
    "positions_ecef": "vec3?",
    "velocities_calib": "vec3?",
    "velocities_ecef": "vec3?",
    "accelerations_calib": "vec3?",
    "accelerations_device": "vec3?",
    "angular_velocities_calib": "vec3?",
    "angular_velocities_device": "vec3?",
    "timestamp": "int",
    "extrinsic_matrix": "mat4?",
    "intrinsic_matrix": "mat3?",
    "trajectory_count": "int",
    "trajectory": "traj",
    "caption": "str",
}


@dataclass
class FrameRecord:
    frame_id: int
    image_path: str
    vEgo: float
    vEgoRaw: float
    aEgo: float
    steeringAngleDeg: float
    steeringTorque: float
    brake: float
    brakePressed: bool
    gas: float
    gasPressed: bool
    doorOpen: bool
    seatbeltUnlatched: bool
    gearShifter: str
    leftBlinker: bool
    rightBlinker: bool
    orientations_calib: Optional[list] = None
    orientations_ecef: Optional[list] = None
    orientations_ned: Optional[list] = None
    positions_ecef: Optional[list] = None
    velocities_calib: Optional[list] = None
    velocities_ecef: Optional[list] = None
    accelerations_calib: Optional[list] = None
    accelerations_device: Optional[list] = None
    angular_velocities_calib: Optional[list] = None
    angular_velocities_device: Optional[list] = None
    timestamp: int = 0
    extrinsic_matrix: Optional[list] = None
    intrinsic_matrix: Optional[list] = None
    trajectory_count: int = 0
    trajectory: list = field(default_factory=list)
    caption: str = ""

    def __post_init__(self):
        if self.trajectory_count != len(self.trajectory):
            raise ValueError(f"trajectory_count {self.trajectory_count} != {len(self.trajectory)} rows")
        if self.trajectory_count > TRAJECTORY_LENGTH:
            raise ValueError(f"trajectory_count {self.trajectory_count} exceeds {TRAJECTORY_LENGTH}")
        if self.trajectory and any(c != 0 for c in self.trajectory[0]):
            raise ValueError("trajectory must start at the vehicle (0, 0, 0)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in SCHEMA}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRecord":
        return cls(**{k: d[k] for k in SCHEMA})


def _floats(v) -> Optional[list]:
    if v is None:
        return None
    return np.asarray(v, dtype=float).ravel().tolist()


def _rows(v) -> Optional[list]:
    if v is None:
        return None
    return np.asarray(v, dtype=float).tolist()


def _euler_zyx(r: np.ndarray) -> list[float]:
    """(roll, pitch, yaw) of a rotation built as Rz(yaw) Ry(pitch) Rx(roll)."""
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return [roll, pitch, yaw]


def orientation_ecef(pose: geodesy.Pose) -> list[float]:
    """Body attitude expressed against the ECEF axes (same Euler convention as NED)."""
    r_body_to_ned = geodesy.body_to_ned_matrix(*pose.orientation_ned)
    r_ned_to_ecef = geodesy.ecef_to_ned_matrix(pose.position).T
    return _euler_zyx(r_ned_to_ecef @ r_body_to_ned)


def assemble_record(frame: AlignedFrame, pose: geodesy.Pose, traj: EgoTrajectory, caption: str,
                    cam: Optional[geodesy.CameraModel] = None, image_path: Optional[str] = None,
                    calib: Optional[dict] = None) -> FrameRecord:
    """Combine one frame's signals, pose, future path and caption.

    ``calib`` may carry calibrated-frame vectors (``orientations_calib`` etc.);
    they are copied as given and left null otherwise.
    """
    if pose.timestamp != frame.timestamp:
        raise FrameMismatch(f"pose at {pose.timestamp} does not belong to frame at {frame.timestamp}")
    can = frame.can
    if can is None:
        raise FrameMismatch(f"frame {frame.frame_id} has no CAN sample")
    calib = calib or {}
    pts = np.asarray(traj.points, dtype=float).reshape(-1, 3)
    imu = frame.imu
    return FrameRecord(
        frame_id=int(frame.frame_id),
        image_path=image_path if image_path is not None else frame.frame.image_path,
        vEgo=float(can.v_ego),
        vEgoRaw=float(can.v_ego_raw),
        aEgo=float(can.a_ego),
        steeringAngleDeg=float(can.steering_angle),
        steeringTorque=float(can.steering_torque),
        brake=float(can.brake),
        brakePressed=bool(can.brake_pressed),
        gas=float(can.gas),
        gasPressed=bool(can.gas_pressed),
        doorOpen=bool(can.door_open),
        seatbeltUnlatched=bool(can.seatbelt_unlatched),
        gearShifter=str(can.gear),
        leftBlinker=bool(can.left_blinker),
        rightBlinker=bool(can.right_blinker),
        orientations_calib=_floats(calib.get("orientations_calib")),
        orientations_ecef=orientation_ecef(pose),
        orientations_ned=_floats(pose.orientation_ned),
        positions_ecef=_floats(pose.position),
        velocities_calib=_floats(calib.get("velocities_calib")),
        velocities_ecef=_floats(pose.velocity_ecef),
        accelerations_calib=_floats(calib.get("accelerations_calib")),
        accelerations_device=_floats(imu.accel_device) if imu is not None else None,
        angular_velocities_calib=_floats(calib.get("angular_velocities_calib")),
        angular_velocities_device=_floats(imu.gyro_device) if imu is not None else None,
        timestamp=int(frame.timestamp),
        extrinsic_matrix=_rows(cam.extrinsic) if cam is not None else None,
        intrinsic_matrix=_rows(cam.intrinsic) if cam is not None else None,
        trajectory_count=len(pts),
        trajectory=_rows(pts) if len(pts) else [],
        caption=caption,
    )


# serialization

_NUMBER_TYPES = {int, float}


def _is_num(x) -> bool:
    return type(x) in _NUMBER_TYPES


def _check_value(kind: str, v) -> Optional[str]:
    """None when ``v`` fits ``kind``, else a description of the problem."""
    if kind.endswith("?"):
        if v is None:
            return None
        kind = kind[:-1]
    if kind == "int":
        return None if isinstance(v, int) and not isinstance(v, bool) else "expected an integer"
    if kind == "float":
        return None if _is_num(v) else "expected a number"
    if kind == "bool":
        return None if isinstance(v, bool) else "expected a boolean"
    if kind == "str":
        return None if isinstance(v, str) else "expected a string"
    if kind == "vec3":
        ok = type(v) is list and len(v) == 3 and {type(x) for x in v} <= _NUMBER_TYPES
        return None if ok else "expected 3 numbers"
    if kind in ("mat3", "mat4", "traj"):
        n = {"mat3": 3, "mat4": 4}.get(kind)
        if type(v) is not list or (n is not None and len(v) != n):
            return f"expected a {n}x{n} matrix" if n else "expected a list of rows"
        width = n or 3
        if any(type(row) is not list or len(row) != width for row in v):
            return f"rows must hold {width} numbers"
        if not {type(x) for row in v for x in row} <= _NUMBER_TYPES:
            return f"rows must hold {width} numbers"
        return None
    raise AssertionError(kind)


def validate_dict(d, line_number: int = 0) -> FrameRecord:
    if not isinstance(d, dict):
        raise SchemaViolation(line_number, "record is not a JSON object")
    missing = [k for k in SCHEMA if k not in d]
    if missing:
        raise SchemaViolation(line_number, f"missing keys: {', '.join(missing)}")
    extra = sorted(set(d) - set(SCHEMA))
    if extra:
        raise SchemaViolation(line_number, f"unknown keys: {', '.join(extra)}")
    for k, kind in SCHEMA.items():
        problem = _check_value(kind, d[k])
        if problem:
            raise SchemaViolation(line_number, f"{k}: {problem}")
    try:
        # JSON integers in float slots stay as they were read; normalize to float
        fixed = dict(d)
        for k, kind in SCHEMA.items():
            if kind == "float":
                fixed[k] = float(d[k])
        return FrameRecord.from_dict(fixed)
    except ValueError as exc:
        raise SchemaViolation(line_number, str(exc)) from exc


def record_line(rec: FrameRecord) -> str:
    # json uses float repr, the shortest string that reads back to the same double
    return json.dumps(rec.to_dict(), allow_nan=False, ensure_ascii=False, separators=(", ", ": "))


def emit_jsonl(records: Iterable[FrameRecord], path: str | os.PathLike) -> Path:
    lines = [record_line(r) for r in records]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def parse_jsonl(text: str) -> list[FrameRecord]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(n, f"invalid JSON: {exc.msg}") from exc
        out.append(validate_dict(d, n))
    return out


def read_jsonl(path: str | os.PathLike) -> list[FrameRecord]:
    return parse_jsonl(Path(path).read_text(encoding="utf-8"))


# statistics

@dataclass
class DatasetStats:
    scene_count: int
    frame_count: int
    hours: float
    blinker_fraction: float
    traffic_light_fraction: float
    speed_histogram: list
    steering_histogram: list
    speed_edges_kmh: tuple = SPEED_EDGES_KMH
    steering_edges_deg: tuple = STEERING_EDGES_DEG
    empty: bool = False

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["speed_edges_kmh"] = list(self.speed_edges_kmh)
        d["steering_edges_deg"] = list(self.steering_edges_deg)
        return d


def hours_for(frame_count: int) -> float:
    return frame_count / FRAMES_PER_HOUR


def _caption_mentions_light(caption: str) -> bool:
    return "traffic light is" in caption


def compute_stats(records: Sequence[FrameRecord], scene_count: Optional[int] = None,
                  traffic_lights: Optional[Sequence[bool]] = None) -> DatasetStats:
    """Corpus summary.

    Traffic-light presence is not part of the record schema: pass one flag per
    record, or it is read off the caption's light clause.
    """
    n = len(records)
    if traffic_lights is not None and len(traffic_lights) != n:
        raise ValueError("one traffic-light flag per record is required")
    if scene_count is None:
        scene_count = len({os.path.dirname(r.image_path) for r in records})
    speed = np.array([r.vEgo * 3.6 for r in records], dtype=float)
    steer = np.array([r.steeringAngleDeg for r in records], dtype=float)
    speed_hist = np.bincount(np.searchsorted(SPEED_EDGES_KMH, speed, side="right"),
                             minlength=len(SPEED_EDGES_KMH) + 1)
    steer_hist = np.bincount(np.searchsorted(STEERING_EDGES_DEG, steer, side="right"),
                             minlength=len(STEERING_EDGES_DEG) + 1)
    blink = sum(1 for r in records if r.leftBlinker or r.rightBlinker)
    if traffic_lights is None:
        lights = sum(1 for r in records if _caption_mentions_light(r.caption))
    else:
        lights = sum(1 for f in traffic_lights if f)
    return DatasetStats(
        scene_count=scene_count,
        frame_count=n,
        hours=hours_for(n),
        blinker_fraction=blink / n if n else 0.0,
        traffic_light_fraction=lights / n if n else 0.0,
        speed_histogram=speed_hist.astype(int).tolist(),
        steering_histogram=steer_hist.astype(int).tolist(),
        empty=n == 0,
    )


# overlay

def record_camera(record: FrameRecord) -> geodesy.CameraModel:
    if record.intrinsic_matrix is None or record.extrinsic_matrix is None:
        raise MissingCamera(f"frame {record.frame_id} has no camera matrices")
    return geodesy.CameraModel.from_lists(record.intrinsic_matrix, record.extrinsic_matrix)


def _project(pts: np.ndarray, cam: geodesy.CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of ego points; returns (uv, mask of points in front of the camera)."""
    pc = pts @ cam.extrinsic[:3, :3].T + cam.extrinsic[:3, 3]
    keep = pc[:, 2] > geodesy.MIN_DEPTH_M
    pc = pc[keep]
    k = cam.intrinsic
    x, y = pc[:, 0] / pc[:, 2], pc[:, 1] / pc[:, 2]
    uv = np.stack([k[0, 0] * x + k[0, 1] * y + k[0, 2], k[1, 1] * y + k[1, 2]], axis=1)
    return uv, keep


def overlay_geometry(record: FrameRecord,
                     cam: Optional[geodesy.CameraModel] = None) -> list[tuple[float, float]]:
    """Pixel positions of the future path, in time order; points too close or behind are dropped.

    ``cam`` overrides the record's own matrices (callers pass a cached model).
    """
    cam = cam or record_camera(record)
    if not record.trajectory:
        return []
    uv, _ = _project(np.asarray(record.trajectory, dtype=float), cam)
    return [tuple(p) for p in uv.tolist()]


def overlay_csv(records: Sequence[FrameRecord]) -> str:
    """``frame_id,u,v`` rows (pixels to 1e-3) for every projectable trajectory point."""
    buf = io.StringIO()
    buf.write("frame_id,u,v\n")
    cameras: dict[str, int] = {}
    models, pts, ids, cam_idx = [], [], [], []
    for rec in records:
        if rec.intrinsic_matrix is None or rec.extrinsic_matrix is None:
            raise MissingCamera(f"frame {rec.frame_id} has no camera matrices")
        key = repr((rec.intrinsic_matrix, rec.extrinsic_matrix))
        if key not in cameras:
            cameras[key] = len(models)
            models.append(record_camera(rec))
        if rec.trajectory:
            n = len(rec.trajectory)
            pts.append(np.asarray(rec.trajectory, dtype=float))
            ids.append(np.full(n, rec.frame_id))
            cam_idx.append(np.full(n, cameras[key]))
    if not pts:
        return buf.getvalue()
    pts, ids, cam_idx = np.concatenate(pts), np.concatenate(ids), np.concatenate(cam_idx)
    # project all points sharing a calibration at once, keeping input order
    table = np.full((len(pts), 3), np.nan)
    for c, cam in enumerate(models):
        sel = np.flatnonzero(cam_idx == c)
        uv, keep = _project(pts[sel], cam)
        table[sel[keep], 0] = ids[sel[keep]]
        table[sel[keep], 1:] = uv
    table = table[~np.isnan(table[:, 0])]
    # one format call over the whole table; same text as np.savetxt, much faster
    buf.write(("%d,%.3f,%.3f\n" * len(table)) % tuple(table.ravel().tolist()))
    return buf.getvalue()


def reference_record() -> FrameRecord:
    """The released example frame (frame 569), bundled as a fixture."""
    text = resources.files("drivevla").joinpath("data/frame_0569.json").read_text()
    return validate_dict(json.loads(text))
