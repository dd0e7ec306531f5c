"""Shared network building blocks and seeded initialization."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def seeded_init(module: nn.Module, seed: int) -> nn.Module:
    """Deterministic init: centered uniform fan-in for convs, unit batch-norm."""
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = (m.in_channels // m.groups) * m.kernel_size[0] * m.kernel_size[1]
            bound = fan_in**-0.5
            m.weight.data.uniform_(-bound, bound, generator=g)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
            m.reset_running_stats()
    return module


class AntiAliasDownsample(nn.Module):
    """Gaussian blur followed by stride subsampling, per channel."""

    def __init__(self, channels: int, factor: int):
        super().__init__()
        self.factor = factor
        sigma = (factor - 1) / 2.0
        size = 2 * round(2 * sigma) + 1
        coords = torch.arange(size, dtype=torch.float32) - (size - 1) / 2.0
        kernel_1d = torch.exp(-(coords**2) / (2.0 * sigma**2))
        kernel = kernel_1d[:, None] * kernel_1d[None, :]
        kernel = kernel / kernel.sum()
        self.register_buffer(
            "kernel", kernel.expand(channels, 1, size, size).contiguous()
        )
        self.channels = channels
        self.pad = size // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.conv2d(x, self.kernel, padding=self.pad, groups=self.channels)
        return x[..., :: self.factor, :: self.factor]
