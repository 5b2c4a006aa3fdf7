"""Split a 600-frame scene into ten 60-frame caption windows."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import WrongLength

SCENE_FRAMES = 600
WINDOW_FRAMES = 60
N_WINDOWS = SCENE_FRAMES // WINDOW_FRAMES
# eight frames spread evenly over the window, first and last included
REPRESENTATIVE_OFFSETS = (0, 8, 17, 25, 34, 42, 51, 59)


@dataclass(frozen=True)
class CaptionWindow:
    window_index: int
    start: int                  # position of the first frame within the scene
    frame_ids: tuple            # all 60 frame ids of the window
    representatives: tuple      # 8 frame ids

    def contains(self, frame_id: int) -> bool:
        return frame_id in self.frame_ids


def make_windows(frame_ids) -> list[CaptionWindow]:
    ids = list(frame_ids)
    if len(ids) != SCENE_FRAMES:
        raise WrongLength(f"scene has {len(ids)} frames, expected {SCENE_FRAMES}")
    out = []
    for w in range(N_WINDOWS):
        span = tuple(ids[w * WINDOW_FRAMES:(w + 1) * WINDOW_FRAMES])
        reps = tuple(span[o] for o in REPRESENTATIVE_OFFSETS)
        out.append(CaptionWindow(w, w * WINDOW_FRAMES, span, reps))
    return out


def window_of(position: int) -> int:
    """Window index of the frame at ``position`` within its scene."""
    if not 0 <= position < SCENE_FRAMES:
        raise WrongLength(f"frame position {position} outside a {SCENE_FRAMES}-frame scene")
    return position // WINDOW_FRAMES
