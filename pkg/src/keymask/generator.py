"""Two-stage frame synthesis: low-res residual generator + U-Net refiner.

Stage one concatenates the downscaled source frame with the source and
driving masks (5 channels), encodes with a 7x7 conv, adds an encoded
source branch at the residual trunk entry, runs the residual blocks,
upsamples twice and projects to RGB through a sigmoid.  Stage two
concatenates the coarse prediction with the full-resolution source
(6 channels) and refines it through a U-Net with per-level skips.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import GeneratorConfig
from .data import Frame
from .errors import ShapeMismatch
from .layers import seeded_init
from .masks import StructuralMask

# Encoder widths double per level but stay below this multiple of base.
MAX_WIDTH_FACTOR = 8


class ResidualBlock(nn.Module):
    """Pre-activation residual block: BN-relu-conv3, BN-relu-conv3, skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.relu(self.norm1(x)))
        h = self.conv2(F.relu(self.norm2(h)))
        return x + h


class LowResGenerator(nn.Module):
    """Coarse synthesis from (source, source mask, driving mask) at low res."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        c = config.base_channels
        self.encode = nn.Sequential(
            nn.Conv2d(5, c, 7, padding=3), nn.BatchNorm2d(c), nn.ReLU()
        )
        self.encode_source = nn.Sequential(
            nn.Conv2d(3, c, 7, padding=3), nn.BatchNorm2d(c), nn.ReLU()
        )
        self.trunk = nn.Sequential(
            *(ResidualBlock(c) for _ in range(config.n_residual_blocks))
        )
        self.decode = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.BatchNorm2d(c),
            nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.BatchNorm2d(c),
            nn.ReLU(),
        )
        self.to_rgb = nn.Conv2d(c, 3, 7, padding=3)

    def forward(self, source_small, source_mask, driving_mask):
        if not (source_small.shape[-2:] == source_mask.shape[-2:] == driving_mask.shape[-2:]):
            raise ShapeMismatch(
                "low-res inputs disagree: "
                f"{tuple(source_small.shape[-2:])}, {tuple(source_mask.shape[-2:])}, "
                f"{tuple(driving_mask.shape[-2:])}"
            )
        x = self.encode(torch.cat([source_small, source_mask, driving_mask], dim=1))
        x = x + self.encode_source(source_small)
        x = self.trunk(x)
        x = self.decode(x)
        return torch.sigmoid(self.to_rgb(x))


class HighResRefiner(nn.Module):
    """U-Net over (coarse, source): five-ish encode/decode levels with skips."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        depth = config.highres_depth
        side = config.input_side
        # Every level, bottleneck included, must keep an even side.
        if side % (2 ** (depth + 1)) != 0:
            raise ShapeMismatch(
                f"input side {side} not divisible by 2^{depth + 1}; "
                f"depth-{depth} refinement needs power-of-two aligned sides"
            )
        base = config.base_channels
        channels = [min(base * 2**i, MAX_WIDTH_FACTOR * base) for i in range(depth)]
        self.enc_convs = nn.ModuleList()
        self.enc_norms = nn.ModuleList()
        in_ch = 6
        for ch in channels:
            self.enc_convs.append(nn.Conv2d(in_ch, ch, 3, padding=1))
            self.enc_norms.append(nn.BatchNorm2d(ch))
            in_ch = ch
        self.dec_convs = nn.ModuleList()
        self.dec_norms = nn.ModuleList()
        width = channels[-1]
        for level in reversed(range(depth)):
            out_ch = channels[max(level - 1, 0)]
            self.dec_convs.append(nn.Conv2d(width + channels[level], out_ch, 3, padding=1))
            self.dec_norms.append(nn.BatchNorm2d(out_ch))
            width = out_ch
        self.project = nn.Conv2d(width, 3, 1)

    def forward(self, coarse, source):
        if coarse.shape[-2:] != source.shape[-2:]:
            raise ShapeMismatch(
                f"coarse {tuple(coarse.shape[-2:])} vs source {tuple(source.shape[-2:])}"
            )
        x = torch.cat([coarse, source], dim=1)
        skips = []
        for conv, norm in zip(self.enc_convs, self.enc_norms):
            h = F.relu(norm(conv(x)))
            skips.append(h)
            x = F.avg_pool2d(h, 2)
        for conv, norm in zip(self.dec_convs, self.dec_norms):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = torch.cat([x, skips.pop()], dim=1)
            x = F.relu(norm(conv(x)))
        return torch.sigmoid(self.project(x))


class FrameSynthesizer(nn.Module):
    """Full pipeline: downscale source, coarse generation, refinement."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.low_res = LowResGenerator(config)
        self.high_res = HighResRefiner(config)

    def forward(self, source, source_mask, driving_mask):
        side = self.config.input_side
        if source.shape[-2:] != (side, side):
            raise ShapeMismatch(
                f"source must be {side}x{side}, got {tuple(source.shape[-2:])}"
            )
        factor = side // self.config.lowres_side
        small = F.avg_pool2d(source, factor) if factor > 1 else source
        coarse = self.low_res(small, source_mask, driving_mask)
        if coarse.shape[-2:] != source.shape[-2:]:
            raise ShapeMismatch(
                f"coarse output {tuple(coarse.shape[-2:])} does not reach the "
                f"input side {side}; lowres_side must be input_side / 4"
            )
        return self.high_res(coarse, source)


def build_generator(config: GeneratorConfig, seed: int = 0) -> FrameSynthesizer:
    return seeded_init(FrameSynthesizer(config), seed)


def synthesize(source, source_mask, driving_mask, model: FrameSynthesizer):
    """Inference wrapper: eval mode, no gradients, frame in / frame out.

    ``source`` may be a Frame, an (H, W, 3) array or a (B, 3, H, W)
    tensor; masks may be StructuralMask or plain tensors.  Array-like
    input returns an (H, W, 3) float32 array.
    """

    def mask_tensor(m):
        t = m.map if isinstance(m, StructuralMask) else m
        return t.unsqueeze(0) if t.ndim == 3 else t

    array_in = isinstance(source, (Frame, np.ndarray))
    if isinstance(source, Frame):
        source = source.pixels
    if isinstance(source, np.ndarray):
        source = torch.from_numpy(
            np.ascontiguousarray(source, dtype=np.float32)
        ).permute(2, 0, 1)
    batched = source.ndim == 4
    images = source if batched else source.unsqueeze(0)

    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(images, mask_tensor(source_mask), mask_tensor(driving_mask))
    if was_training:
        model.train()
    if array_in:
        return out[0].permute(1, 2, 0).numpy().astype(np.float32)
    return out if batched else out[0]
