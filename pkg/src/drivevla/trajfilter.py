"""Reject trajectories with implausible jumps or a wrong-direction 10 Hz vibration.

Jumps: an adjacent-point step longer than the distance covered in one frame at
the speed ceiling, times a tolerance. Vibration: the trajectory minus its
centred 3-point moving average, with the per-axis residual variances summed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import TooShort

OK, JUMP, VIBRATION = "ok", "jump", "vibration"


@dataclass
class FilterThresholds:
    max_speed_kmh: float = 100.0
    fps: float = 20.0
    tolerance: float = 1.15
    vibration_variance_threshold: float = 2.5e-3
    moving_average_window: int = 3

    def __post_init__(self):
        for name in ("max_speed_kmh", "fps", "tolerance", "vibration_variance_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        w = self.moving_average_window
        if w < 1 or w % 2 == 0:
            raise ValueError("moving_average_window must be a positive odd integer")


@dataclass
class TrajectoryVerdict:
    valid: bool
    reason: str
    metric: float

    def to_dict(self) -> dict:
        return {"valid": self.valid, "reason": self.reason, "metric": self.metric}


def base_step(t: FilterThresholds) -> float:
    """Distance covered between frames at the speed ceiling, in meters."""
    return t.max_speed_kmh * 1000.0 / (3600.0 * t.fps)


def jump_threshold(t: Optional[FilterThresholds] = None) -> float:
    t = t or FilterThresholds()
    return base_step(t) * t.tolerance


def step_lengths(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def detect_jump(points, t: Optional[FilterThresholds] = None) -> TrajectoryVerdict:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise TooShort("jump detection needs at least 2 points")
    worst = float(step_lengths(pts).max())
    # ties pass: only steps exceeding the threshold are rejected
    if worst > jump_threshold(t):
        return TrajectoryVerdict(False, JUMP, worst)
    return TrajectoryVerdict(True, OK, worst)


def moving_average(points, window: int = 3) -> np.ndarray:
    """Centred moving average whose window shrinks symmetrically near the ends.

    Keeping the window symmetric makes any uniformly sampled straight line a
    fixed point, endpoints included.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    half = window // 2
    csum = np.vstack([np.zeros((1, 3)), np.cumsum(pts, axis=0)])
    idx = np.arange(n)
    reach = np.minimum(np.minimum(idx, n - 1 - idx), half)
    lo, hi = idx - reach, idx + reach + 1
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def residual_variance(points, window: int = 3) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    residual = pts - moving_average(pts, window)
    return float(residual.var(axis=0).sum())


def detect_vibration(points, t: Optional[FilterThresholds] = None) -> TrajectoryVerdict:
    t = t or FilterThresholds()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise TooShort("vibration detection needs at least 3 points")
    var = residual_variance(pts, t.moving_average_window)
    if var > t.vibration_variance_threshold:
        return TrajectoryVerdict(False, VIBRATION, var)
    return TrajectoryVerdict(True, OK, var)


def check_trajectory(points, t: Optional[FilterThresholds] = None) -> TrajectoryVerdict:
    """Jump check first, then vibration; too-short prefixes pass what they cannot be tested on."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        return TrajectoryVerdict(True, OK, 0.0)
    verdict = detect_jump(pts, t)
    if not verdict.valid or len(pts) < 3:
        return verdict
    return detect_vibration(pts, t)


def _batch_verdicts(stack: np.ndarray, t: FilterThresholds) -> list[TrajectoryVerdict]:
    """Same rules as check_trajectory over an (M, N, 3) stack of equal-length trajectories."""
    steps = np.linalg.norm(np.diff(stack, axis=1), axis=2).max(axis=1)
    n = stack.shape[1]
    half = t.moving_average_window // 2
    csum = np.concatenate([np.zeros((stack.shape[0], 1, 3)), np.cumsum(stack, axis=1)], axis=1)
    idx = np.arange(n)
    reach = np.minimum(np.minimum(idx, n - 1 - idx), half)
    lo, hi = idx - reach, idx + reach + 1
    smooth = (csum[:, hi] - csum[:, lo]) / (hi - lo)[None, :, None]
    var = (stack - smooth).var(axis=1).sum(axis=1)
    limit = jump_threshold(t)
    out = []
    for step, v in zip(steps.tolist(), var.tolist()):
        if step > limit:
            out.append(TrajectoryVerdict(False, JUMP, step))
        elif v > t.vibration_variance_threshold:
            out.append(TrajectoryVerdict(False, VIBRATION, v))
        else:
            out.append(TrajectoryVerdict(True, OK, v))
    return out


def filter_recording(trajs: Iterable, t: Optional[FilterThresholds] = None) -> list[TrajectoryVerdict]:
    """One verdict per trajectory (anything with a ``points`` attribute or an (N, 3) array)."""
    t = t or FilterThresholds()
    arrays = [np.asarray(getattr(tr, "points", tr), dtype=float).reshape(-1, 3) for tr in trajs]
    verdicts: list[Optional[TrajectoryVerdict]] = [None] * len(arrays)
    by_len: dict[int, list[int]] = {}
    for i, a in enumerate(arrays):
        if len(a) >= 3:
            by_len.setdefault(len(a), []).append(i)
        else:
            verdicts[i] = check_trajectory(a, t)
    for members in by_len.values():
        stack = np.stack([arrays[i] for i in members])
        for i, v in zip(members, _batch_verdicts(stack, t)):
            verdicts[i] = v
    return verdicts


def summarize(verdicts: list[TrajectoryVerdict]) -> TrajectoryVerdict:
    """Collapse per-frame verdicts to one: any jump wins, then any vibration."""
    jumps = [v.metric for v in verdicts if v.reason == JUMP]
    if jumps:
        return TrajectoryVerdict(False, JUMP, max(jumps))
    vib = [v.metric for v in verdicts if v.reason == VIBRATION]
    if vib:
        return TrajectoryVerdict(False, VIBRATION, max(vib))
    return TrajectoryVerdict(True, OK, max((v.metric for v in verdicts), default=0.0))
