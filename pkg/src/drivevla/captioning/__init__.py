"""Rule-based frame captions and VLM window captions."""

from .rules import (CaptionThresholds, FrameContext, RuleCaption, context_from_frame, curvature,
                    rule_caption, steering_curvature)
from .vlm import (AttributeQuery, AttributeSet, VlmCaption, VlmClient, augment_caption,
                  build_prompt, caption_windows, compose_frame_caption, extract_attributes,
                  load_queries, rule_digest)
from .windows import CaptionWindow, REPRESENTATIVE_OFFSETS, make_windows, window_of

__all__ = [
    "AttributeQuery", "AttributeSet", "CaptionThresholds", "CaptionWindow", "FrameContext",
    "REPRESENTATIVE_OFFSETS", "RuleCaption", "VlmCaption", "VlmClient", "augment_caption",
    "build_prompt", "caption_windows", "compose_frame_caption", "context_from_frame", "curvature",
    "extract_attributes", "load_queries", "make_windows", "rule_caption", "rule_digest",
    "steering_curvature", "window_of",
]
