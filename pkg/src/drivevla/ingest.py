"""Read per-stream JSONL recordings and align them to the 20 Hz camera clock.

A recording is a directory holding one line-delimited JSON file per stream::

    <recording>/can.jsonl  gnss.jsonl  imu.jsonl  frames.jsonl
               traffic_lights.jsonl  radar.jsonl  boxes.jsonl   (optional)
               calibration.json                                 (optional)

Every line carries an integer ``timestamp`` in Unix epoch milliseconds.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np

from . import geodesy
from .errors import MalformedRecord, MissingStream

log = logging.getLogger(__name__)

FRAME_PERIOD_MS = 50
NEAREST_WINDOW_MS = 100
GNSS_WINDOW_MS = 1000
IMAGE_WIDTH = 1928
IMAGE_HEIGHT = 1208

GEARS = ("park", "reverse", "neutral", "drive", "low")
LIGHT_STATES = ("red", "yellow", "green", "red_with_arrow", "unknown")
ARROW_DIRECTIONS = ("left", "right", "straight")

REQUIRED_STREAMS = ("can", "gnss", "imu", "frames")
OPTIONAL_STREAMS = ("traffic_lights", "radar", "boxes")


@dataclass
class CanFrame:
    timestamp: int
    v_ego: float
    v_ego_raw: float
    a_ego: float
    steering_angle: float
    steering_torque: float
    brake: float
    brake_pressed: bool
    gas: float
    gas_pressed: bool
    door_open: bool
    seatbelt_unlatched: bool
    gear: str
    left_blinker: bool
    right_blinker: bool

    @classmethod
    def from_dict(cls, d: dict) -> "CanFrame":
        gear = str(d["gear"]).lower()
        frame = cls(
            timestamp=_int(d["timestamp"]),
            v_ego=_float(d["v_ego"]),
            v_ego_raw=_float(d.get("v_ego_raw", d["v_ego"])),
            a_ego=_float(d["a_ego"]),
            steering_angle=_float(d["steering_angle"]),
            steering_torque=_float(d.get("steering_torque", 0.0)),
            brake=_float(d.get("brake", 0.0)),
            brake_pressed=_bool(d.get("brake_pressed", False)),
            gas=_float(d.get("gas", 0.0)),
            gas_pressed=_bool(d.get("gas_pressed", False)),
            door_open=_bool(d.get("door_open", False)),
            seatbelt_unlatched=_bool(d.get("seatbelt_unlatched", False)),
            # vendor codes outside the enum are kept as "other"
            gear=gear if gear in GEARS else "other",
            left_blinker=_bool(d.get("left_blinker", False)),
            right_blinker=_bool(d.get("right_blinker", False)),
        )
        if frame.v_ego < 0:
            raise ValueError("v_ego must be non-negative")
        if not (0.0 <= frame.brake <= 1.0 and 0.0 <= frame.gas <= 1.0):
            raise ValueError("brake/gas must lie in [0, 1]")
        return frame

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GnssFix:
    timestamp: int
    position_ecef: np.ndarray
    fix_valid: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "GnssFix":
        fix = cls(_int(d["timestamp"]), _vec3(d["position_ecef"]), _bool(d.get("fix_valid", True)))
        if fix.fix_valid:
            r = float(np.linalg.norm(fix.position_ecef))
            if not 6.2e6 <= r <= 6.6e6:
                raise ValueError(f"valid fix {r:.1f} m from Earth's centre")
        return fix

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "position_ecef": self.position_ecef.tolist(),
                "fix_valid": self.fix_valid}


@dataclass
class ImuSample:
    timestamp: int
    accel_device: np.ndarray
    gyro_device: np.ndarray

    @classmethod
    def from_dict(cls, d: dict) -> "ImuSample":
        return cls(_int(d["timestamp"]), _vec3(d["accel_device"]), _vec3(d["gyro_device"]))

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "accel_device": self.accel_device.tolist(),
                "gyro_device": self.gyro_device.tolist()}


@dataclass
class FrameIndex:
    frame_id: int
    timestamp: int
    image_path: str

    @classmethod
    def from_dict(cls, d: dict) -> "FrameIndex":
        fid = _int(d["frame_id"])
        if fid < 0:
            raise ValueError("negative frame_id")
        return cls(fid, _int(d["timestamp"]), str(d["image_path"]))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrafficLightObs:
    frame_id: int
    state: str
    bbox: tuple[float, float, float, float]
    arrow: Optional[str] = None
    timestamp: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficLightObs":
        state = str(d["state"])
        arrow = d.get("arrow")
        if state not in LIGHT_STATES:
            raise ValueError(f"unknown light state {state!r}")
        if arrow is not None and arrow not in ARROW_DIRECTIONS:
            raise ValueError(f"unknown arrow direction {arrow!r}")
        bbox = tuple(_float(v) for v in d["bbox"])
        if len(bbox) != 4:
            raise ValueError("bbox needs 4 values")
        x0, y0, x1, y1 = bbox
        if not (0 <= x0 <= x1 <= IMAGE_WIDTH and 0 <= y0 <= y1 <= IMAGE_HEIGHT):
            raise ValueError("bbox outside image")
        return cls(_int(d["frame_id"]), state, bbox, arrow, _int(d.get("timestamp", 0)))

    def to_dict(self) -> dict:
        d = {"timestamp": self.timestamp, "frame_id": self.frame_id, "state": self.state,
             "bbox": list(self.bbox)}
        if self.arrow is not None:
            d["arrow"] = self.arrow
        return d

    @property
    def area(self) -> float:
        return (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])


@dataclass
class RadarTarget:
    timestamp: int
    range: float
    range_rate: float
    azimuth: float

    @classmethod
    def from_dict(cls, d: dict) -> "RadarTarget":
        t = cls(_int(d["timestamp"]), _float(d["range"]), _float(d["range_rate"]), _float(d["azimuth"]))
        if t.range <= 0:
            raise ValueError("radar range must be positive")
        return t

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def ego_xy(self) -> tuple[float, float]:
        """(longitudinal, lateral) with lateral positive to the left."""
        return self.range * math.cos(self.azimuth), self.range * math.sin(self.azimuth)


@dataclass
class CameraBox:
    frame_id: int
    bbox: tuple[float, float, float, float]
    label: str = "car"
    timestamp: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "CameraBox":
        bbox = tuple(_float(v) for v in d["bbox"])
        if len(bbox) != 4:
            raise ValueError("bbox needs 4 values")
        return cls(_int(d["frame_id"]), bbox, str(d.get("class", "car")), _int(d.get("timestamp", 0)))

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "frame_id": self.frame_id, "bbox": list(self.bbox),
                "class": self.label}

    def contains(self, u: float, v: float) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 <= u <= x1 and y0 <= v <= y1


@dataclass
class LeadVehicleObs:
    frame_id: int
    rel_position: tuple[float, float]
    speed: float
    accel: float = 0.0


_PARSERS: dict[str, Callable[[dict], Any]] = {
    "can": CanFrame.from_dict,
    "gnss": GnssFix.from_dict,
    "imu": ImuSample.from_dict,
    "frames": FrameIndex.from_dict,
    "traffic_lights": TrafficLightObs.from_dict,
    "radar": RadarTarget.from_dict,
    "boxes": CameraBox.from_dict,
}


@dataclass
class SensorLog:
    can: list[CanFrame] = field(default_factory=list)
    gnss: list[GnssFix] = field(default_factory=list)
    imu: list[ImuSample] = field(default_factory=list)
    frames: list[FrameIndex] = field(default_factory=list)
    traffic_lights: list[TrafficLightObs] = field(default_factory=list)
    radar: list[RadarTarget] = field(default_factory=list)
    boxes: list[CameraBox] = field(default_factory=list)
    camera: Optional[geodesy.CameraModel] = None
    recording_id: str = ""

    def counts(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in REQUIRED_STREAMS + OPTIONAL_STREAMS}

    @property
    def span_s(self) -> float:
        if not self.frames:
            return 0.0
        return (self.frames[-1].timestamp - self.frames[0].timestamp) / 1000.0


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ValueError(f"expected integer, got {v!r}")
    return int(v)


def _float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected number, got {v!r}")
    f = float(v)
    if not math.isfinite(f):
        raise ValueError("non-finite number")
    return f


def _bool(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected boolean, got {v!r}")
    return v


def _vec3(v) -> np.ndarray:
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ValueError(f"expected 3-vector, got {v!r}")
    return np.array([_float(c) for c in v])


def parse_stream(name: str, lines: Iterable[str | bytes]) -> list:
    """Parse one stream's JSONL lines, sorted by timestamp. Unknown keys are ignored."""
    parser = _PARSERS[name]
    out = []
    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            if not isinstance(obj, dict):
                raise ValueError("record is not a JSON object")
            out.append(parser(obj))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedRecord(name, lineno, str(exc)) from None
    out.sort(key=lambda r: r.timestamp)
    return out


def _json_default(o):
    # numpy scalars and arrays that slipped into a record
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def serialize_stream(records: Iterable) -> str:
    return "".join(json.dumps(r.to_dict(), default=_json_default) + "\n" for r in records)


def parse_log(source: str | Path) -> SensorLog:
    """Load every stream of one recording directory."""
    root = Path(source)
    streams = {}
    for name in REQUIRED_STREAMS + OPTIONAL_STREAMS:
        path = root / f"{name}.jsonl"
        if not path.exists():
            if name in REQUIRED_STREAMS:
                raise MissingStream(name)
            streams[name] = []
            continue
        with open(path, encoding="utf-8") as fh:
            streams[name] = parse_stream(name, fh)
    camera = None
    calib = root / "calibration.json"
    if calib.exists():
        c = json.loads(calib.read_text())
        camera = geodesy.CameraModel.from_lists(c["intrinsic_matrix"], c["extrinsic_matrix"])
    sensor_log = SensorLog(**streams, camera=camera, recording_id=root.name)
    log.info("parsed recording %s: %s", root.name, sensor_log.counts())
    return sensor_log


@dataclass
class AlignedFrame:
    frame: FrameIndex
    can: Optional[CanFrame]
    imu: Optional[ImuSample]
    gnss_position: Optional[np.ndarray]
    gnss_available: bool
    traffic_light: Optional[TrafficLightObs] = None
    radar: list[RadarTarget] = field(default_factory=list)
    boxes: list[CameraBox] = field(default_factory=list)
    lead: Optional[LeadVehicleObs] = None

    @property
    def frame_id(self) -> int:
        return self.frame.frame_id

    @property
    def timestamp(self) -> int:
        return self.frame.timestamp


def _nearest(times: list[int], items: list, t: int, window_ms: int):
    if not times:
        return None
    i = bisect.bisect_left(times, t)
    best = None
    # ties resolve to the earlier sample
    for j in (i - 1, i):
        if 0 <= j < len(times):
            d = abs(times[j] - t)
            if d <= window_ms and (best is None or d < best[0]):
                best = (d, items[j])
    return None if best is None else best[1]


def _interp_gnss(times: list[int], fixes: list[GnssFix], t: int) -> Optional[np.ndarray]:
    """Linear interpolation between the bracketing valid fixes.

    Unavailable when the frame is outside the fix span or the bracketing gap is
    wider than GNSS_WINDOW_MS.
    """
    if not times:
        return None
    i = bisect.bisect_left(times, t)
    if i < len(times) and times[i] == t:
        return fixes[i].position_ecef.copy()
    if i == 0 or i == len(times):
        return None
    t0, t1 = times[i - 1], times[i]
    if t1 - t0 > GNSS_WINDOW_MS:
        return None
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * fixes[i - 1].position_ecef + w * fixes[i].position_ecef


def align_to_frames(sensor_log: SensorLog, fusion: "FusionConfig | None" = None) -> list[AlignedFrame]:
    """One AlignedFrame per FrameIndex; stream gaps become flags, never errors."""
    can_t = [c.timestamp for c in sensor_log.can]
    imu_t = [s.timestamp for s in sensor_log.imu]
    valid = [g for g in sensor_log.gnss if g.fix_valid]
    gnss_t = [g.timestamp for g in valid]
    radar_t = [r.timestamp for r in sensor_log.radar]

    lights: dict[int, TrafficLightObs] = {}
    for obs in sensor_log.traffic_lights:
        # keep the largest (nearest) light per frame
        cur = lights.get(obs.frame_id)
        if cur is None or obs.area > cur.area:
            lights[obs.frame_id] = obs
    boxes: dict[int, list[CameraBox]] = {}
    for b in sensor_log.boxes:
        boxes.setdefault(b.frame_id, []).append(b)

    cfg = fusion or FusionConfig()
    camera = sensor_log.camera or cfg.camera
    half = FRAME_PERIOD_MS // 2
    out = []
    for fr in sensor_log.frames:
        pos = _interp_gnss(gnss_t, valid, fr.timestamp)
        lo = bisect.bisect_left(radar_t, fr.timestamp - half)
        hi = bisect.bisect_right(radar_t, fr.timestamp + half - 1)
        af = AlignedFrame(
            frame=fr,
            can=_nearest(can_t, sensor_log.can, fr.timestamp, NEAREST_WINDOW_MS),
            imu=_nearest(imu_t, sensor_log.imu, fr.timestamp, NEAREST_WINDOW_MS),
            gnss_position=pos,
            gnss_available=pos is not None,
            traffic_light=lights.get(fr.frame_id),
            radar=list(sensor_log.radar[lo:hi]),
            boxes=boxes.get(fr.frame_id, []),
        )
        af.lead = select_lead_vehicle(af.radar, af.boxes, af, cfg, camera)
        out.append(af)
    _fill_lead_accel(out)
    return out


@dataclass
class FusionConfig:
    lane_half_width: float = 1.8
    target_height: float = 0.5  # radar return height above ground, m
    vehicle_labels: tuple[str, ...] = ("car", "truck", "bus", "motorcycle")
    camera: geodesy.CameraModel = field(default_factory=geodesy.reference_camera)


def select_lead_vehicle(radar: list[RadarTarget], boxes: list[CameraBox], frame: AlignedFrame,
                        cfg: FusionConfig | None = None,
                        camera: geodesy.CameraModel | None = None) -> Optional[LeadVehicleObs]:
    """Nearest in-lane radar target whose image projection falls inside a vehicle box."""
    cfg = cfg or FusionConfig()
    camera = camera or cfg.camera
    ego_speed = frame.can.v_ego if frame.can is not None else 0.0
    best = None
    for target in radar:
        lon, lat = target.ego_xy()
        if lon <= 0 or abs(lat) > cfg.lane_half_width:
            continue
        uv = geodesy.project_to_image((lon, lat, cfg.target_height), camera)
        if uv is None:
            continue
        if not any(b.label in cfg.vehicle_labels and b.contains(*uv) for b in boxes):
            continue
        if best is None or lon < best[0]:
            best = (lon, lat, target)
    if best is None:
        return None
    lon, lat, target = best
    return LeadVehicleObs(frame.frame_id, (lon, lat), ego_speed + target.range_rate)


def _fill_lead_accel(frames: list[AlignedFrame]) -> None:
    prev = None
    for af in frames:
        if af.lead is None:
            prev = None
            continue
        if prev is not None:
            dt = (af.timestamp - prev.timestamp) / 1000.0
            if dt > 0:
                af.lead.accel = (af.lead.speed - prev.lead.speed) / dt
        prev = af
