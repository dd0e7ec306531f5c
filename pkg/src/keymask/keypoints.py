"""Keypoint detection: raw heatmaps, spatial softmax, soft-argmax, Gaussians.

Coordinates are normalized to [-1, 1]^2 with the origin at the image
center, x rightward and y downward, sampled at cell centers: cell (row,
col) of an (h, w) grid maps to ((2*col + 1)/w - 1, (2*row + 1)/h - 1).
For power-of-two grids these coordinates are exact dyadic floats, which
keeps the soft-argmax of a one-hot channel exact and on-grid shifts
exactly equivariant.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import DetectorConfig
from .data import Frame
from .errors import (
    ConfigMismatch,
    InvalidTemperature,
    InvalidVariance,
    ShapeMismatch,
    UnsupportedCheckpoint,
)
from .layers import AntiAliasDownsample, seeded_init
from .serialization import read_container, write_container

DETECTOR_MAGIC = b"KMKD"
DETECTOR_FORMAT_VERSION = 1


def coordinate_grid(
    grid: tuple[int, int],
    dtype: torch.dtype = torch.float32,
    device: torch.device | None = None,
) -> torch.Tensor:
    """Cell-center coordinates, shape (h, w, 2) with (x, y) last."""
    h, w = grid
    xs = (2.0 * torch.arange(w, dtype=dtype, device=device) + 1.0) / w - 1.0
    ys = (2.0 * torch.arange(h, dtype=dtype, device=device) + 1.0) / h - 1.0
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y], dim=-1)


def spatial_softmax(stack: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    """Per-channel softmax over the spatial grid, max-shifted for stability."""
    if temperature <= 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    scaled = stack / temperature
    flat = scaled.reshape(*scaled.shape[:-2], -1)
    probs = F.softmax(flat, dim=-1)
    return probs.reshape(stack.shape)


def extract_keypoints(probs: torch.Tensor) -> torch.Tensor:
    """Probability-weighted mean grid location per channel.

    probs: (..., K, h, w) normalized channels.  Returns (..., K, 2) with
    (x, y) in [-1, 1].
    """
    h, w = probs.shape[-2:]
    grid = coordinate_grid((h, w), dtype=probs.dtype, device=probs.device)
    return (probs.unsqueeze(-1) * grid).sum(dim=(-3, -2))


def render_gaussians(
    kps: torch.Tensor,
    variance: float,
    grid: tuple[int, int],
) -> torch.Tensor:
    """Unnormalized Gaussian blob per keypoint, peak 1 at the keypoint.

    kps: (..., K, 2) normalized coordinates.  Returns (..., K, h, w).
    """
    if variance <= 0:
        raise InvalidVariance(f"variance must be > 0, got {variance}")
    coords = coordinate_grid(grid, dtype=kps.dtype, device=kps.device)
    delta = coords - kps[..., None, None, :]
    sq_dist = (delta**2).sum(dim=-1)
    return torch.exp(-sq_dist / (2.0 * variance))


# --- detector network -------------------------------------------------------


class DownBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return F.avg_pool2d(F.relu(self.norm(self.conv(x))), 2)


class UpBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.relu(self.norm(self.conv(x)))


class Hourglass(nn.Module):
    """Symmetric encoder-decoder with skip concatenation at every level."""

    def __init__(self, in_channels: int, expansion: int, num_blocks: int, max_features: int):
        super().__init__()
        enc_ch = [min(max_features, expansion * 2 ** (i + 1)) for i in range(num_blocks)]
        self.downs = nn.ModuleList(
            DownBlock(in_channels if i == 0 else enc_ch[i - 1], enc_ch[i])
            for i in range(num_blocks)
        )
        ups = []
        width = enc_ch[-1]
        for level in reversed(range(num_blocks)):
            out_ch = expansion if level == 0 else min(max_features, expansion * 2**level)
            ups.append(UpBlock(width, out_ch))
            skip_ch = in_channels if level == 0 else enc_ch[level - 1]
            width = out_ch + skip_ch
        self.ups = nn.ModuleList(ups)
        self.out_channels = width

    def forward(self, x):
        skips = [x]
        for down in self.downs:
            skips.append(down(skips[-1]))
        out = skips.pop()
        for up in self.ups:
            out = torch.cat([up(out), skips.pop()], dim=1)
        return out


class KeypointDetector(nn.Module):
    """Hourglass over a 4x-downsampled frame, 7x7 head to K raw channels."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.downsample = AntiAliasDownsample(3, 4)
        self.hourglass = Hourglass(
            3, config.block_expansion, config.num_blocks, config.max_features
        )
        self.head = nn.Conv2d(
            self.hourglass.out_channels, config.num_keypoints, 7, padding=3
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.hourglass(self.downsample(images)))


def build_detector(config: DetectorConfig, seed: int = 0) -> KeypointDetector:
    return seeded_init(KeypointDetector(config), seed)


def _frame_to_tensor(frame) -> tuple[torch.Tensor, bool]:
    """Normalize Frame/(H,W,3) array/tensor input to (B, 3, H, W)."""
    if isinstance(frame, Frame):
        frame = frame.pixels
    if isinstance(frame, np.ndarray):
        frame = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32))
    if frame.ndim == 3 and frame.shape[-1] == 3:
        frame = frame.permute(2, 0, 1)
    if frame.ndim == 3:
        return frame.unsqueeze(0), True
    if frame.ndim == 4:
        return frame, False
    raise ShapeMismatch(f"expected an RGB frame, got shape {tuple(frame.shape)}")


def predict_heatmaps(frame, detector: KeypointDetector) -> torch.Tensor:
    """Raw (pre-activation) K-channel heatmaps for one preprocessed frame.

    Inference surface: runs in eval mode without gradients and returns a
    (K, h, w) tensor ((B, K, h, w) for batched input).
    """
    images, single = _frame_to_tensor(frame)
    side = detector.config.input_side
    if images.shape[-2:] != (side, side):
        raise ShapeMismatch(
            f"detector expects {side}x{side} input, got {tuple(images.shape[-2:])}"
        )
    was_training = detector.training
    detector.eval()
    with torch.no_grad():
        out = detector(images)
    if was_training:
        detector.train()
    return out[0] if single else out


# --- persistence ------------------------------------------------------------


def save_detector(detector: KeypointDetector, path: str | Path) -> None:
    cfg = detector.config
    header = {
        "k": cfg.num_keypoints,
        "grid": [cfg.grid_side, cfg.grid_side],
        "temperature": cfg.temperature,
        "variance": cfg.variance,
        "config": {
            "num_keypoints": cfg.num_keypoints,
            "block_expansion": cfg.block_expansion,
            "num_blocks": cfg.num_blocks,
            "max_features": cfg.max_features,
            "input_side": cfg.input_side,
            "temperature": cfg.temperature,
            "variance": cfg.variance,
        },
    }
    blobs = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in detector.state_dict().items()
    }
    write_container(path, DETECTOR_MAGIC, DETECTOR_FORMAT_VERSION, header, blobs)


def load_pretrained(path: str | Path, expect_k: int | None = None) -> KeypointDetector:
    """Load a detector checkpoint; the result is frozen and in eval mode."""
    header, blobs = read_container(path, DETECTOR_MAGIC, DETECTOR_FORMAT_VERSION)
    try:
        config = DetectorConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise UnsupportedCheckpoint(f"{path}: malformed header") from exc
    if expect_k is not None and config.num_keypoints != expect_k:
        raise ConfigMismatch(
            f"checkpoint has K={config.num_keypoints}, expected K={expect_k}"
        )
    detector = KeypointDetector(config)
    state = {name: torch.from_numpy(arr) for name, arr in blobs.items()}
    try:
        detector.load_state_dict(state)
    except RuntimeError as exc:
        raise UnsupportedCheckpoint(f"{path}: parameter blobs do not match") from exc
    detector.requires_grad_(False)
    detector.eval()
    return detector


def write_keypoints_csv(path: str | Path, keypoints_per_frame: list[torch.Tensor]) -> None:
    """Export per-frame keypoints as ``frame,point_id,x,y`` (normalized)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "point_id", "x", "y"])
        for t, kps in enumerate(keypoints_per_frame):
            for p, (x, y) in enumerate(kps.tolist()):
                writer.writerow([t, p, f"{x:.6f}", f"{y:.6f}"])
