"""Collapse detector output into the single-channel structural mask.

Two variants: ``heatmap`` sums the raw pre-activation channels and
min-max rescales the sum to [0, 1]; ``circles`` sums Gaussian blobs
rendered at the extracted keypoints and clips at 1.  The circles mask is
a pure function of the keypoints, so frames that agree on keypoints get
bit-identical masks regardless of appearance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import CIRCLES, HEATMAP, MaskConfig
from .keypoints import extract_keypoints, render_gaussians, spatial_softmax


@dataclass
class StructuralMask:
    """Single-channel spatial map in [0, 1], shape (..., 1, h, w)."""

    map: torch.Tensor
    variant: str
    origin_kps: torch.Tensor | None = None
    # True where the source stack was constant and the map forced to zero.
    degenerate: bool | torch.Tensor = False


def heatmap_mask(stack: torch.Tensor, threshold: float = 0.0) -> StructuralMask:
    """Sum the raw channels and min-max rescale per image.

    stack: (..., K, h, w) pre-activation heatmaps.  A constant sum (max
    equals min) yields an all-zeros map flagged degenerate.  ``threshold``
    zeroes rescaled values below it (disabled at 0.0).
    """
    total = stack.sum(dim=-3)
    lo = total.amin(dim=(-2, -1), keepdim=True)
    hi = total.amax(dim=(-2, -1), keepdim=True)
    span = hi - lo
    degenerate = (span == 0).reshape(span.shape[:-2])
    safe_span = torch.where(span == 0, torch.ones_like(span), span)
    scaled = torch.where(
        span == 0, torch.zeros_like(total), (total - lo) / safe_span
    )
    if threshold > 0.0:
        scaled = torch.where(scaled >= threshold, scaled, torch.zeros_like(scaled))
    if degenerate.ndim == 0:
        degenerate = bool(degenerate)
    return StructuralMask(
        map=scaled.unsqueeze(-3), variant=HEATMAP, degenerate=degenerate
    )


def circles_mask(
    kps: torch.Tensor,
    variance: float,
    grid: tuple[int, int],
) -> StructuralMask:
    """Sum of keypoint Gaussians, clipped to [0, 1]; keeps the keypoints."""
    blobs = render_gaussians(kps, variance, grid)
    total = blobs.sum(dim=-3).clamp(0.0, 1.0)
    return StructuralMask(map=total.unsqueeze(-3), variant=CIRCLES, origin_kps=kps)


def mask_from_heatmaps(
    stack: torch.Tensor,
    mask_cfg: MaskConfig,
    temperature: float = 0.1,
) -> StructuralMask:
    """Build either mask variant from a raw heatmap stack."""
    if mask_cfg.variant == HEATMAP:
        return heatmap_mask(stack, threshold=mask_cfg.threshold)
    if mask_cfg.variant == CIRCLES:
        probs = spatial_softmax(stack, temperature)
        kps = extract_keypoints(probs)
        return circles_mask(kps, mask_cfg.variance, stack.shape[-2:])
    raise ValueError(f"unknown mask variant: {mask_cfg.variant}")


def save_mask_png(mask: StructuralMask | torch.Tensor, path: str | Path) -> None:
    """Write a mask (or any [0, 1] single-channel map) as 8-bit grayscale."""
    tensor = mask.map if isinstance(mask, StructuralMask) else mask
    array = tensor.detach().squeeze().cpu().numpy()
    if array.ndim != 2:
        raise ValueError(f"expected one 2-D map, got shape {array.shape}")
    data = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)
