"""Deterministic per-frame captions from vehicle state, path shape, lead vehicle and lights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import IncompleteTrajectory
from ..ingest import AlignedFrame, LeadVehicleObs

TRAJECTORY_POINTS = 60
MIN_ARC_M = 1.0
# bicycle-model fallback for frames whose future path is cut short
WHEELBASE_M = 2.7
STEERING_RATIO = 15.0

CLAUSES = ("motion", "steering", "lead", "light", "signal")


@dataclass(frozen=True)
class CaptionThresholds:
    stopped_speed: float = 0.5          # m/s
    accel: float = 0.5                  # m/s^2, symmetric for braking
    slow_kmh: float = 30.0
    fast_kmh: float = 60.0
    curving: float = 0.002              # 1/m
    turning: float = 0.01               # 1/m


@dataclass
class FrameContext:
    speed: float
    accel: float
    curvature: float
    lead: Optional[LeadVehicleObs] = None
    traffic_light: Optional[str] = None
    arrow: Optional[str] = None
    blinker: str = "none"

    def __post_init__(self):
        for name in ("speed", "accel", "curvature"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.blinker not in ("none", "left", "right"):
            raise ValueError(f"unknown blinker state {self.blinker!r}")


@dataclass
class RuleCaption:
    text: str
    clauses: list[str] = field(default_factory=list)


def curvature(points) -> float:
    """Signed curvature (+ left) of a complete future path.

    Total heading change between the first and last moving segments divided
    by the arc length between their midpoints; 0 when the path covers less
    than a meter.
    """
    pts = np.asarray(getattr(points, "points", points), dtype=float).reshape(-1, 3)
    if len(pts) != TRAJECTORY_POINTS:
        raise IncompleteTrajectory(f"trajectory has {len(pts)} points, expected {TRAJECTORY_POINTS}")
    seg = np.diff(pts[:, :2], axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if lengths.sum() < MIN_ARC_M:
        return 0.0
    moving = lengths > 1e-6
    seg, lengths = seg[moving], lengths[moving]
    if len(seg) < 2:
        return 0.0
    heading = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
    arc = lengths.sum() - 0.5 * (lengths[0] + lengths[-1])
    if arc <= 0:
        return 0.0
    return float((heading[-1] - heading[0]) / arc)


def steering_curvature(steering_deg: float) -> float:
    """Path curvature implied by the steering-wheel angle (+ left)."""
    return math.tan(math.radians(steering_deg) / STEERING_RATIO) / WHEELBASE_M


def _speed_band(speed: float, th: CaptionThresholds) -> str:
    kmh = speed * 3.6
    if kmh < th.slow_kmh:
        return "at a slow speed"
    if kmh < th.fast_kmh:
        return "at a moderate speed"
    return "at a high speed"


def _motion(ctx: FrameContext, th: CaptionThresholds) -> str:
    if ctx.speed < th.stopped_speed:
        return "The ego vehicle is stopped."
    band = _speed_band(ctx.speed, th)
    if ctx.accel > th.accel:
        return f"The ego vehicle is accelerating {band}."
    if ctx.accel < -th.accel:
        return f"The ego vehicle is decelerating {band}."
    return f"The ego vehicle is moving {band} at a constant speed."


def _steering(ctx: FrameContext, th: CaptionThresholds) -> str:
    k = ctx.curvature
    side = "left" if k > 0 else "right"
    if abs(k) < th.curving:
        return "It is moving straight."
    if abs(k) <= th.turning:
        return f"It is driving along a curve to the {side}."
    return f"It is turning {side}."


def rule_caption(ctx: FrameContext, thresholds: Optional[CaptionThresholds] = None) -> RuleCaption:
    th = thresholds or CaptionThresholds()
    parts = [("motion", _motion(ctx, th))]
    if ctx.speed >= th.stopped_speed:
        parts.append(("steering", _steering(ctx, th)))
    if ctx.lead is not None:
        dist = int(round(float(ctx.lead.rel_position[0])))
        parts.append(("lead", f"A leading vehicle is present {dist} meters ahead."))
    if ctx.traffic_light is not None and ctx.traffic_light != "unknown":
        if ctx.traffic_light == "red_with_arrow":
            light = f"The traffic light is red with a {ctx.arrow or 'green'} arrow."
        elif ctx.arrow:
            light = f"The traffic light is {ctx.traffic_light} with a {ctx.arrow} arrow."
        else:
            light = f"The traffic light is {ctx.traffic_light}."
        parts.append(("light", light))
    if ctx.blinker != "none":
        parts.append(("signal", f"The {ctx.blinker} turn signal is active."))
    return RuleCaption(" ".join(text for _, text in parts), [tag for tag, _ in parts])


def context_from_frame(frame: AlignedFrame, trajectory=None) -> FrameContext:
    """Build the caption context of one aligned frame.

    Curvature comes from the frame's future path when that path is complete;
    otherwise it falls back to the steering angle.
    """
    can = frame.can
    speed = can.v_ego if can else 0.0
    accel = can.a_ego if can else 0.0
    pts = None if trajectory is None else getattr(trajectory, "points", trajectory)
    if pts is not None and len(pts) == TRAJECTORY_POINTS:
        k = curvature(pts)
    else:
        k = steering_curvature(can.steering_angle) if can else 0.0
    blinker = "none"
    if can and can.left_blinker != can.right_blinker:
        blinker = "left" if can.left_blinker else "right"
    light = frame.traffic_light
    return FrameContext(speed, accel, k, frame.lead,
                        light.state if light else None, light.arrow if light else None, blinker)
