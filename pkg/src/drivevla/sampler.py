"""Scene eligibility, driving-feature binning and diversity sampling.

Each 30 s scene is summarized by its peak steering, peak acceleration and
whether a blinker was used. Scenes are weighted by the inverse of the
smoothed count of their feature cell, 1 / (count + delta), and drawn without
replacement with exponential keys u ** (1 / w).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NotEnoughScenes, WrongLength
from .ingest import AlignedFrame

SCENE_FRAMES = 600
MAX_SPEED_MS = 100.0 / 3.6
DEFAULT_DELTA = 50.0

# report-only binning of the scene's mean speed, km/h
SPEED_EDGES_KMH = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0)


@dataclass(frozen=True)
class SceneFeatures:
    max_abs_steering: float
    max_abs_accel: float
    turn_signal_used: bool
    # "left", "right", "both" or "none"; only used by ternary binning
    turn_signal_side: str = "none"
    mean_speed: float = 0.0

    def __post_init__(self):
        if self.max_abs_steering < 0 or self.max_abs_accel < 0:
            raise ValueError("feature maxima must be non-negative")


@dataclass
class BinningConfig:
    steering_edges: tuple = (5.0, 15.0, 45.0, 90.0, 180.0, 360.0, 540.0)
    accel_edges: tuple = (0.5, 1.0, 2.0, 3.0)
    ternary_turn_signal: bool = False

    def __post_init__(self):
        for name in ("steering_edges", "accel_edges"):
            edges = tuple(float(e) for e in getattr(self, name))
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{name} must be strictly ascending")
            setattr(self, name, edges)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.steering_edges) + 1, len(self.accel_edges) + 1,
                3 if self.ternary_turn_signal else 2)

    def cell(self, f: SceneFeatures) -> tuple[int, int, int]:
        s = int(np.searchsorted(self.steering_edges, f.max_abs_steering, side="right"))
        a = int(np.searchsorted(self.accel_edges, f.max_abs_accel, side="right"))
        if self.ternary_turn_signal:
            # both blinkers (hazards) counts as "left" so every scene lands somewhere
            sig = {"none": 0, "left": 1, "right": 2, "both": 1}[f.turn_signal_side]
        else:
            sig = int(f.turn_signal_used)
        return s, a, sig


@dataclass
class JointDistribution:
    counts: dict = field(default_factory=dict)
    delta: float = DEFAULT_DELTA

    @classmethod
    def from_features(cls, features: Sequence[SceneFeatures], bins: BinningConfig,
                      delta: float = DEFAULT_DELTA) -> "JointDistribution":
        counts: dict = {}
        for f in features:
            c = bins.cell(f)
            counts[c] = counts.get(c, 0) + 1
        return cls(counts, delta)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class SceneCandidate:
    recording_id: str
    start_frame: int
    features: SceneFeatures
    eligible: bool = True
    weight: float = 0.0
    n_frames: int = SCENE_FRAMES

    @property
    def scene_id(self) -> str:
        return f"{self.recording_id}_{self.start_frame:06d}"

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.n_frames

    def overlaps(self, other: "SceneCandidate") -> bool:
        return (self.recording_id == other.recording_id
                and self.start_frame < other.end_frame and other.start_frame < self.end_frame)

    def to_dict(self) -> dict:
        f = self.features
        return {
            "scene_id": self.scene_id,
            "recording_id": self.recording_id,
            "start_frame": self.start_frame,
            "n_frames": self.n_frames,
            "eligible": self.eligible,
            "weight": self.weight,
            "max_abs_steering": f.max_abs_steering,
            "max_abs_accel": f.max_abs_accel,
            "turn_signal_used": f.turn_signal_used,
            "turn_signal_side": f.turn_signal_side,
            "mean_speed": f.mean_speed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneCandidate":
        f = SceneFeatures(float(d["max_abs_steering"]), float(d["max_abs_accel"]),
                          bool(d["turn_signal_used"]), d.get("turn_signal_side", "none"),
                          float(d.get("mean_speed", 0.0)))
        return cls(d["recording_id"], int(d["start_frame"]), f, bool(d["eligible"]),
                   float(d["weight"]), int(d.get("n_frames", SCENE_FRAMES)))


def eligibility(frames: Sequence[AlignedFrame]) -> bool:
    """Drive gear throughout, never above 100 km/h, GNSS on every frame."""
    if len(frames) != SCENE_FRAMES:
        raise WrongLength(f"scene has {len(frames)} frames, expected {SCENE_FRAMES}")
    for fr in frames:
        if fr.can is None or fr.can.gear != "drive" or fr.can.v_ego > MAX_SPEED_MS:
            return False
        if not fr.gnss_available:
            return False
    return True


def extract_features(frames: Sequence[AlignedFrame], trajectory=None) -> SceneFeatures:
    """Scene maxima of |steering| and |a_ego| plus blinker usage.

    ``trajectory`` is accepted for interface symmetry; the features come from
    CAN alone.
    """
    cans = [fr.can for fr in frames if fr.can is not None]
    if not cans:
        return SceneFeatures(0.0, 0.0, False)
    steer = max(abs(c.steering_angle) for c in cans)
    accel = max(abs(c.a_ego) for c in cans)
    left = any(c.left_blinker for c in cans)
    right = any(c.right_blinker for c in cans)
    side = "both" if left and right else "left" if left else "right" if right else "none"
    speed = float(np.mean([c.v_ego for c in cans]))
    return SceneFeatures(float(steer), float(accel), left or right, side, speed)


def scene_candidates(recording_id: str, frames: Sequence[AlignedFrame],
                     trajectories=None, scene_frames: int = SCENE_FRAMES) -> list[SceneCandidate]:
    """Cut a recording into back-to-back scenes (30 s grid, 30 s stride)."""
    out = []
    for start in range(0, len(frames) - scene_frames + 1, scene_frames):
        chunk = frames[start:start + scene_frames]
        traj = None if trajectories is None else trajectories[start:start + scene_frames]
        out.append(SceneCandidate(recording_id, start, extract_features(chunk, traj),
                                  eligibility(chunk), n_frames=scene_frames))
    return out


def weights(features: Sequence[SceneFeatures], bins: Optional[BinningConfig] = None,
            delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Normalized 1 / (cell count + delta) per scene."""
    if not features:
        raise ValueError("weights need at least one scene")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    bins = bins or BinningConfig()
    dist = JointDistribution.from_features(features, bins, delta)
    raw = np.array([1.0 / (dist.counts[bins.cell(f)] + delta) for f in features])
    return raw / raw.sum()


def assign_weights(candidates: Sequence[SceneCandidate], bins: Optional[BinningConfig] = None,
                   delta: float = DEFAULT_DELTA) -> None:
    """Set ``weight`` on eligible candidates (ineligible ones get 0)."""
    eligible = [c for c in candidates if c.eligible]
    for c in candidates:
        c.weight = 0.0
    if eligible:
        for c, w in zip(eligible, weights([c.features for c in eligible], bins, delta)):
            c.weight = float(w)


def sample_scenes(candidates: Sequence[SceneCandidate], n: int, seed: int) -> list[SceneCandidate]:
    """Weighted draw of ``n`` non-overlapping eligible scenes.

    Every eligible candidate gets key u ** (1 / w); keys are visited from the
    largest down and a candidate is taken unless it overlaps one already taken.
    The result keeps the candidates' input order.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    pool = [(i, c) for i, c in enumerate(candidates) if c.eligible and c.weight > 0]
    rng = np.random.default_rng(seed)
    u = rng.random(len(pool))
    w = np.array([c.weight for _, c in pool])
    # log-keys: log(u) / w keeps the order of u ** (1 / w) without underflow
    keys = np.log(u) / w if len(pool) else np.array([])
    taken: list[tuple[int, SceneCandidate]] = []
    for j in np.argsort(-keys, kind="stable"):
        if len(taken) == n:
            break
        i, c = pool[j]
        if any(c.overlaps(t) for _, t in taken):
            continue
        taken.append((i, c))
    if len(taken) < n:
        raise NotEnoughScenes(f"asked for {n} scenes, only {len(taken)} eligible and non-overlapping")
    return [c for _, c in sorted(taken, key=lambda t: t[0])]


def entropy(hist) -> float:
    """Shannon entropy in bits of a histogram (zero bins ignored)."""
    h = np.asarray(hist, dtype=float)
    total = h.sum()
    if total <= 0:
        return 0.0
    p = h[h > 0] / total
    return float(-(p * np.log2(p)).sum())


@dataclass
class Histogram:
    feature: str
    edges: tuple
    before: list
    after: list
    valid: bool = True

    @property
    def entropy_before(self) -> float:
        return entropy(self.before)

    @property
    def entropy_after(self) -> float:
        return entropy(self.after)

    def labels(self) -> list[str]:
        lo = ("-inf",) + tuple(f"{e:g}" for e in self.edges)
        hi = tuple(f"{e:g}" for e in self.edges) + ("inf",)
        return [f"[{a},{b})" for a, b in zip(lo, hi)]


def _binned(values, edges) -> list[int]:
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="right")
    return np.bincount(idx, minlength=len(edges) + 1).astype(int).tolist()


def distribution_report(before: Sequence[SceneCandidate], after: Sequence[SceneCandidate],
                        bins: Optional[BinningConfig] = None) -> list[Histogram]:
    """Binned speed (km/h) and steering (deg) marginals before and after sampling."""
    bins = bins or BinningConfig()
    out = []
    for name, edges, get in (
        ("speed_kmh", SPEED_EDGES_KMH, lambda c: c.features.mean_speed * 3.6),
        ("steering_deg", bins.steering_edges, lambda c: c.features.max_abs_steering),
    ):
        out.append(Histogram(name, tuple(edges), _binned([get(c) for c in before], edges),
                             _binned([get(c) for c in after], edges),
                             valid=bool(before) and bool(after)))
    return out


def report_csv(hists: Sequence[Histogram]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "bin", "before", "after", "valid"])
    for h in hists:
        for label, b, a in zip(h.labels(), h.before, h.after):
            w.writerow([h.feature, label, b, a, int(h.valid)])
        w.writerow([h.feature, "entropy_bits", f"{h.entropy_before:.6f}", f"{h.entropy_after:.6f}",
                    int(h.valid)])
    return buf.getvalue()


def binomial_band(p: float, trials: int, k: float = 2.0) -> float:
    """k-sigma half-width of the frequency of a Bernoulli(p) over ``trials`` draws."""
    return k * math.sqrt(p * (1.0 - p) / trials)
