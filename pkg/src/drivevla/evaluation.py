"""Trajectory-prediction evaluation: ADE/FDE, scene splits, a kinematic baseline
and per-word error attribution."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dataset import FrameRecord
from .errors import EmptyTrajectory, LengthMismatch

SOURCE_FPS = 20
TRAJECTORY_POINTS = 60
SUBSAMPLE_INDICES = tuple(range(5, TRAJECTORY_POINTS, 6))    # 5, 11, ..., 59
WHEELBASE_M = 2.7
STEERING_RATIO = 15.0
MIN_WORD_FREQ = 10


def _pair_arrays(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    if p.ndim != 2 or g.ndim != 2 or p.shape[1] != g.shape[1]:
        raise LengthMismatch(f"trajectory shapes {p.shape} and {g.shape} are not comparable")
    if len(p) != len(g):
        raise LengthMismatch(f"{len(p)} predicted points vs {len(g)} ground-truth points")
    if len(p) == 0:
        raise EmptyTrajectory("trajectories have no points")
    return p, g


def ade(pred, gt) -> float:
    """Mean Euclidean distance over corresponding points."""
    p, g = _pair_arrays(pred, gt)
    return float(np.linalg.norm(p - g, axis=1).mean())


def fde(pred, gt) -> float:
    """Euclidean distance between the final points."""
    p, g = _pair_arrays(pred, gt)
    return float(np.linalg.norm(p[-1] - g[-1]))


@dataclass
class TrajectoryPair:
    predicted: np.ndarray
    ground_truth: np.ndarray
    gt_caption: str = ""
    predicted_caption: str = ""
    # the rule-based part of the ground-truth caption; whole caption when empty
    gt_rule_caption: str = ""
    key: tuple = ()

    def __post_init__(self):
        self.predicted, self.ground_truth = _pair_arrays(self.predicted, self.ground_truth)

    @property
    def ade(self) -> float:
        return ade(self.predicted, self.ground_truth)

    @property
    def fde(self) -> float:
        return fde(self.predicted, self.ground_truth)


@dataclass
class EvalResult:
    ade: float
    fde: float
    count: int
    averaging: str = "macro: per-pair ADE/FDE, then the mean over pairs"

    def to_dict(self) -> dict:
        return {"ade": self.ade, "fde": self.fde, "count": self.count, "averaging": self.averaging}


def evaluate(pairs: Sequence[TrajectoryPair]) -> EvalResult:
    if not pairs:
        return EvalResult(0.0, 0.0, 0)
    a = [p.ade for p in pairs]
    f = [p.fde for p in pairs]
    return EvalResult(float(np.mean(a)), float(np.mean(f)), len(pairs))


# splits

@dataclass
class SplitSpec:
    fractions: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    frame_rate_hz: float = 2.0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be three non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")
        if not 0 < self.frame_rate_hz <= SOURCE_FPS:
            raise ValueError(f"frame_rate_hz must be in (0, {SOURCE_FPS}]")
        if SOURCE_FPS % self.frame_rate_hz:
            raise ValueError("frame_rate_hz must divide the source frame rate")

    @property
    def stride(self) -> int:
        return int(SOURCE_FPS // self.frame_rate_hz)


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(math.floor(fractions[0] * n + 0.5))
    n_val = min(n - n_train, int(math.floor(fractions[1] * n + 0.5)))
    return n_train, n_val, n - n_train - n_val


def split_scenes(scene_ids: Sequence[str], spec: Optional[SplitSpec] = None) -> dict[str, list[str]]:
    """Seeded shuffle of the (sorted) scene ids cut at the split fractions."""
    spec = spec or SplitSpec()
    ids = sorted(scene_ids)
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = split_sizes(len(ids), spec.fractions)
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }


def subsample_trajectory(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) != TRAJECTORY_POINTS:
        raise LengthMismatch(f"need {TRAJECTORY_POINTS} points, got {len(pts)}")
    return pts[list(SUBSAMPLE_INDICES)]


def subsample_scene(records: Sequence[FrameRecord], stride: int = 10) -> list[FrameRecord]:
    """Frames whose id is a multiple of ``stride`` and that carry a complete future path.

    Keying on the frame id rather than list position keeps the 2 Hz grid fixed
    when some frames of a scene were dropped.
    """
    return [r for r in records
            if r.frame_id % stride == 0 and r.trajectory_count == TRAJECTORY_POINTS]


def split_and_subsample(scenes: Mapping[str, Sequence[FrameRecord]],
                        spec: Optional[SplitSpec] = None) -> dict[str, list[tuple[str, FrameRecord]]]:
    """Scene-level split, then 2 Hz frames with complete paths, as (scene_id, record)."""
    spec = spec or SplitSpec()
    groups = split_scenes(list(scenes), spec)
    return {name: [(sid, r) for sid in ids for r in subsample_scene(scenes[sid], spec.stride)]
            for name, ids in groups.items()}


# baseline

def baseline_predict(record: FrameRecord, wheelbase: float = WHEELBASE_M,
                     steering_ratio: float = STEERING_RATIO) -> np.ndarray:
    """Constant speed and yaw rate from the steering angle, sampled at the subsample times.

    Point k of a path lies k frames ahead, so the retained points sit at
    t = index / 20 s.
    """
    v = float(record.vEgo)
    wheel = math.radians(float(record.steeringAngleDeg)) / steering_ratio
    yaw_rate = v * math.tan(wheel) / wheelbase
    return arc_points(v, yaw_rate, [i / SOURCE_FPS for i in SUBSAMPLE_INDICES])


def arc_points(speed: float, yaw_rate: float, times: Sequence[float]) -> np.ndarray:
    """Positions (x forward, y left) along a constant-curvature path."""
    t = np.asarray(times, dtype=float)
    if abs(yaw_rate) < 1e-12:
        x, y = speed * t, np.zeros_like(t)
    else:
        r = speed / yaw_rate
        x = r * np.sin(yaw_rate * t)
        y = r * (1.0 - np.cos(yaw_rate * t))
    return np.stack([x, y, np.zeros_like(t)], axis=1)


# predictions file

def read_predictions(lines: Iterable[str]) -> dict[tuple, tuple[np.ndarray, str]]:
    """JSONL rows ``{"frame_id", "trajectory", ["scene_id"], ["caption"]}`` keyed by
    (scene_id or "", frame_id)."""
    out = {}
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        d = json.loads(line)
        traj = np.asarray(d["trajectory"], dtype=float)
        if traj.shape != (len(SUBSAMPLE_INDICES), 3):
            raise LengthMismatch(f"prediction line {n}: trajectory shape {traj.shape}")
        out[(str(d.get("scene_id", "")), int(d["frame_id"]))] = (traj, str(d.get("caption", "")))
    return out


def prediction_line(scene_id: str, frame_id: int, traj, caption: str = "") -> str:
    d = {"scene_id": scene_id, "frame_id": int(frame_id),
         "trajectory": [[float(x) for x in row] for row in np.asarray(traj, dtype=float)]}
    if caption:
        d["caption"] = caption
    return json.dumps(d)


# word attribution

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("drivevla").joinpath("data/stopwords.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines()
                     if w.strip() and not w.startswith("#"))


@dataclass
class WordAttribution:
    word: str
    mean_ade: float
    mean_fde: float
    frequency: int


@dataclass
class AttributionReport:
    by_ade: list = field(default_factory=list)
    by_fde: list = field(default_factory=list)


def word_attribution(pairs: Sequence[TrajectoryPair], stopwords: Optional[Iterable[str]] = None,
                     min_freq: int = MIN_WORD_FREQ, top_k: Optional[int] = None) -> AttributionReport:
    """Mean ADE/FDE of the pairs in which a word is in exactly one of the
    ground-truth rule caption and the predicted caption.

    Words with frequency <= ``min_freq`` and stopwords are dropped. Both
    rankings are returned (largest mean first, ties by word).
    """
    stop = load_stopwords() if stopwords is None else frozenset(w.lower() for w in stopwords)
    sums: dict[str, list] = {}
    for pair in pairs:
        gt_words = tokenize(pair.gt_rule_caption or pair.gt_caption)
        pred_words = tokenize(pair.predicted_caption)
        diff = gt_words ^ pred_words
        if not diff:
            continue
        a, f = pair.ade, pair.fde
        for w in diff:
            s = sums.setdefault(w, [0.0, 0.0, 0])
            s[0] += a
            s[1] += f
            s[2] += 1
    rows = [WordAttribution(w, s[0] / s[2], s[1] / s[2], s[2])
            for w, s in sums.items() if s[2] > min_freq and w not in stop]
    by_ade = sorted(rows, key=lambda r: (-r.mean_ade, r.word))
    by_fde = sorted(rows, key=lambda r: (-r.mean_fde, r.word))
    if top_k is not None:
        by_ade, by_fde = by_ade[:top_k], by_fde[:top_k]
    return AttributionReport(by_ade, by_fde)


def attribution_csv(rows: Sequence[WordAttribution]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word", "mean_ade", "mean_fde", "frequency"])
    for r in rows:
        w.writerow([r.word, f"{r.mean_ade:.6f}", f"{r.mean_fde:.6f}", r.frequency])
    return buf.getvalue()
