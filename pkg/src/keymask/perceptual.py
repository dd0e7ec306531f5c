"""Multi-resolution perceptual reconstruction loss over frozen features.

The default backend taps the first post-activation of each of the five
VGG-19 stages; weights are loaded from a local torchvision-format state
dict so nothing is ever downloaded.  A miniature random-weight two-stage
extractor ships for CI and desk-scale training, selectable directly or
as a fallback when the VGG weights file is absent.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Frame
from .errors import ConfigMismatch, NotFound, ShapeMismatch
from .layers import seeded_init

log = logging.getLogger(__name__)

# Smallest pyramid resolution; also the minimum supported input side.
MIN_PYRAMID_SIDE = 32
PYRAMID_LEVELS = 4

_VGG_SLICES = (2, 7, 12, 21, 30)  # ends after relu1_1 .. relu5_1
_TINY_SEED = 0x7EA7


class Vgg19Features(nn.Module):
    """Frozen VGG-19 tapped after the first activation of each stage."""

    mean = (0.485, 0.456, 0.406)
    std = (0.229, 0.224, 0.225)

    def __init__(self, state_dict: dict | None = None):
        super().__init__()
        from torchvision.models import vgg19

        net = vgg19(weights=None)
        if state_dict is not None:
            net.load_state_dict(state_dict)
        features = net.features
        start = 0
        self.slices = nn.ModuleList()
        for end in _VGG_SLICES:
            self.slices.append(nn.Sequential(*features[start:end]))
            start = end
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        taps = []
        for block in self.slices:
            x = block(x)
            taps.append(x)
        return taps


class TinyFeatures(nn.Module):
    """Miniature frozen two-stage extractor with fixed random weights."""

    mean = (0.5, 0.5, 0.5)
    std = (0.5, 0.5, 0.5)

    def __init__(self, seed: int = _TINY_SEED):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        seeded_init(self, seed)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        tap1 = F.relu(self.conv1(x))
        tap2 = F.relu(self.conv2(F.avg_pool2d(tap1, 2)))
        return [tap1, tap2]


def make_extractor(
    kind: str = "vgg19",
    weights_path: str | Path | None = None,
    allow_untrained: bool = False,
) -> nn.Module:
    """Build a feature extractor backend.

    ``vgg19`` requires a local weights file; when it is missing,
    ``allow_untrained`` swaps in the miniature extractor with a warning
    instead of failing.
    """
    if kind == "tiny":
        return TinyFeatures()
    if kind != "vgg19":
        raise ConfigMismatch(f"unknown extractor kind: {kind}")
    if weights_path and Path(weights_path).exists():
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        return Vgg19Features(state)
    if allow_untrained:
        log.warning(
            "VGG-19 weights not found at %r; falling back to the miniature "
            "random-weight extractor",
            str(weights_path) if weights_path else None,
        )
        return TinyFeatures()
    raise NotFound(
        f"VGG-19 weights file not found: {weights_path!r} "
        "(pass allow_untrained to fall back to the miniature extractor)"
    )


def _as_batch(frame) -> torch.Tensor:
    if isinstance(frame, Frame):
        frame = frame.pixels
    if isinstance(frame, np.ndarray):
        frame = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32))
        if frame.ndim == 3 and frame.shape[-1] == 3:
            frame = frame.permute(2, 0, 1)
    if frame.ndim == 3:
        frame = frame.unsqueeze(0)
    if frame.ndim != 4 or frame.shape[1] != 3:
        raise ShapeMismatch(f"expected RGB frames, got shape {tuple(frame.shape)}")
    return frame


def _normalize(images: torch.Tensor, extractor: nn.Module) -> torch.Tensor:
    mean = torch.tensor(extractor.mean, dtype=images.dtype, device=images.device)
    std = torch.tensor(extractor.std, dtype=images.dtype, device=images.device)
    return (images - mean.view(1, 3, 1, 1)) / std.view(1, 3, 1, 1)


def feature_maps(frame, extractor: nn.Module) -> list[torch.Tensor]:
    """Tapped feature pyramid of one frame (or batch); differentiable
    with respect to the input, never to the extractor."""
    return extractor(_normalize(_as_batch(frame), extractor))


def reconstruction_loss(pred, target, extractor: nn.Module) -> torch.Tensor:
    """Sum over tapped layers of the mean absolute feature difference."""
    pred = _as_batch(pred)
    target = _as_batch(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(
            f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}"
        )
    pred_feats = feature_maps(pred, extractor)
    with torch.no_grad():
        target_feats = feature_maps(target, extractor)
    loss = pred.new_zeros(())
    for fp, ft in zip(pred_feats, target_feats):
        loss = loss + (fp - ft).abs().mean()
    return loss


def pyramid_scales(side: int) -> list[int]:
    """Resolutions used by the loss pyramid for a given input side."""
    if side < MIN_PYRAMID_SIDE:
        raise ConfigMismatch(
            f"input side {side} below the smallest pyramid scale "
            f"{MIN_PYRAMID_SIDE}"
        )
    return [side >> k for k in range(PYRAMID_LEVELS) if (side >> k) >= MIN_PYRAMID_SIDE]


def pyramid_loss(pred, target, extractor: nn.Module) -> torch.Tensor:
    """Equal-weight sum of reconstruction_loss over the down-sampling pyramid."""
    pred = _as_batch(pred)
    target = _as_batch(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(
            f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}"
        )
    scales = pyramid_scales(pred.shape[-1])
    loss = pred.new_zeros(())
    for level, _ in enumerate(scales):
        if level > 0:
            pred = F.avg_pool2d(pred, 2)
            target = F.avg_pool2d(target, 2)
        loss = loss + reconstruction_loss(pred, target, extractor)
    return loss
