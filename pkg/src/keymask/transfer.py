"""Driving-side mask construction for absolute and relative animation.

Absolute mode masks the current driving frame directly.  Relative mode
moves the source keypoints by the driving displacement since the driving
video's first frame, then renders the circles mask from the displaced
points; it is undefined for the heatmap variant, which has no keypoints
to displace.
"""

from __future__ import annotations

import torch

from .config import ABSOLUTE, CIRCLES, RELATIVE, MaskConfig
from .errors import ConfigMismatch, IncompatibleMode
from .keypoints import KeypointDetector, extract_keypoints, predict_heatmaps, spatial_softmax
from .masks import StructuralMask, circles_mask, mask_from_heatmaps


def relative_keypoints(
    kp_source: torch.Tensor,
    kp_driving_t: torch.Tensor,
    kp_driving_first: torch.Tensor,
) -> torch.Tensor:
    """Source keypoints moved by the driving displacement, clamped to [-1, 1]."""
    if not (kp_source.shape == kp_driving_t.shape == kp_driving_first.shape):
        raise ConfigMismatch(
            "keypoint sets disagree: "
            f"{tuple(kp_source.shape)} vs {tuple(kp_driving_t.shape)} "
            f"vs {tuple(kp_driving_first.shape)}"
        )
    moved = kp_source + (kp_driving_t - kp_driving_first)
    return moved.clamp(-1.0, 1.0)


def frame_keypoints(frame, detector: KeypointDetector) -> torch.Tensor:
    """Extracted keypoints of one frame (inference path)."""
    stack = predict_heatmaps(frame, detector)
    probs = spatial_softmax(stack, detector.config.temperature)
    return extract_keypoints(probs)


def driving_mask(
    mode: str,
    source_frame,
    driving_frame_t,
    driving_frame_first,
    detector: KeypointDetector,
    mask_cfg: MaskConfig,
) -> StructuralMask:
    """Mask that drives synthesis of one animation frame."""
    if mode == ABSOLUTE:
        stack = predict_heatmaps(driving_frame_t, detector)
        return mask_from_heatmaps(stack, mask_cfg, detector.config.temperature)
    if mode == RELATIVE:
        if mask_cfg.variant != CIRCLES:
            raise IncompatibleMode(
                "relative transfer requires the circles mask variant"
            )
        kp_source = frame_keypoints(source_frame, detector)
        kp_t = frame_keypoints(driving_frame_t, detector)
        kp_first = frame_keypoints(driving_frame_first, detector)
        moved = relative_keypoints(kp_source, kp_t, kp_first)
        grid = (detector.config.grid_side, detector.config.grid_side)
        return circles_mask(moved, mask_cfg.variance, grid)
    raise IncompatibleMode(f"unknown transfer mode: {mode}")
