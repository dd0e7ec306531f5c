"""Video ingestion, preprocessing, pair sampling and the synthetic dataset.

Frames live on disk as zero-padded numbered PNGs in one directory per
video (``<root>/<split>/<video_id>/<%07d>.png``); video containers are
decoded behind the same ``load_video`` contract.  The synthetic dataset
renders two discs moving along analytically known trajectories over a
static textured background and is the canonical CI dataset.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from .errors import (
    DatasetTooSmall,
    EmptyVideo,
    InconsistentFrames,
    InvalidTarget,
    NotFound,
)

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class Frame:
    """One RGB frame, float32 pixels in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray
    source_id: str = ""
    index: int = 0

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


FrameSequence = list[Frame]


@dataclass
class VideoDataset:
    videos: list[FrameSequence]
    video_ids: list[str]
    split: str = "train"
    root: Path | None = None
    # Analytic point tracks for synthetic data: (videos, frames, points, xy) px.
    tracks: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.videos)


def load_frame_image(path: str | Path) -> np.ndarray:
    """Decode one image file to float32 RGB in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def load_video(path: str | Path, source_id: str | None = None) -> FrameSequence:
    """Load a frame directory or video container as a FrameSequence.

    Directory entries are taken in lexicographic order; containers are
    decoded with OpenCV.  Raises NotFound, EmptyVideo or
    InconsistentFrames.
    """
    path = Path(path)
    if not path.exists():
        raise NotFound(f"video path does not exist: {path}")
    source_id = source_id if source_id is not None else path.stem

    arrays: list[np.ndarray] = []
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        for p in files:
            try:
                arrays.append(load_frame_image(p))
            except OSError:
                log.warning("skipping undecodable frame %s", p)
    else:
        capture = cv2.VideoCapture(str(path))
        try:
            while True:
                ok, bgr = capture.read()
                if not ok:
                    break
                rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
                arrays.append(rgb.astype(np.float32) / 255.0)
        finally:
            capture.release()

    if not arrays:
        raise EmptyVideo(f"no decodable frames in {path}")
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise InconsistentFrames(
            f"{path}: mixed frame resolutions {sorted(shapes)}"
        )
    return [
        Frame(pixels=a, source_id=source_id, index=i)
        for i, a in enumerate(arrays)
    ]


def preprocess(frame: Frame, target: int = 256) -> Frame:
    """Center-crop to the shorter-side square, then resize to target^2.

    A no-op (same object) on frames that are already target x target,
    which makes the operation idempotent.
    """
    if target < 8:
        raise InvalidTarget(f"target side {target} < 8")
    px = frame.pixels
    h, w = px.shape[:2]
    if h == target and w == target:
        return frame
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = px[top : top + side, left : left + side]
    if side != target:
        crop = cv2.resize(crop, (target, target), interpolation=cv2.INTER_AREA)
    crop = np.clip(crop, 0.0, 1.0).astype(np.float32)
    return replace(frame, pixels=crop)


def sample_training_pair(dataset: VideoDataset, seed: int) -> tuple[Frame, Frame]:
    """Draw one (source, driving) pair from a single video, seeded."""
    rng = np.random.default_rng(seed)
    return _sample_pair(dataset, rng)


def _sample_pair(
    dataset: VideoDataset, rng: np.random.Generator
) -> tuple[Frame, Frame]:
    eligible = [i for i, v in enumerate(dataset.videos) if len(v) >= 2]
    if not eligible:
        raise DatasetTooSmall("need at least one video with >= 2 frames")
    video = dataset.videos[eligible[int(rng.integers(len(eligible)))]]
    n = len(video)
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    return video[i], video[j]


def split_by_hash(video_ids: list[str], eval_fraction: float) -> tuple[list[str], list[str]]:
    """Deterministic train/eval split ordered by the sha1 of each id."""
    ranked = sorted(video_ids, key=lambda v: hashlib.sha1(v.encode()).hexdigest())
    n_eval = int(round(len(video_ids) * eval_fraction))
    eval_ids = set(ranked[:n_eval])
    train = [v for v in video_ids if v not in eval_ids]
    return train, sorted(eval_ids)


# --- synthetic dataset -----------------------------------------------------


def make_synthetic_dataset(
    n_videos: int,
    n_frames: int,
    side: int,
    seed: int,
    split: str = "train",
) -> VideoDataset:
    """Render a deterministic two-disc dataset with known point tracks.

    Each video shows a red disc plus a smaller blue limb disc orbiting it,
    both translating along smooth sinusoidal trajectories over a static
    low-frequency background.  Tracks are (n_videos, n_frames, 2, 2)
    pixel (x, y) centers: point 0 is the main disc, point 1 the limb.
    """
    if n_videos < 1 or n_frames < 2 or side < 32:
        raise ValueError("need n_videos >= 1, n_frames >= 2, side >= 32")
    rng = np.random.default_rng(seed)

    r_main = 0.11 * side
    r_limb = 0.07 * side
    orbit = r_main + r_limb + 0.05 * side
    margin = orbit + r_limb + 2.0
    half = side / 2.0
    max_amp = half - margin - 1.0

    ys, xs = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    videos: list[FrameSequence] = []
    video_ids: list[str] = []
    tracks = np.zeros((n_videos, n_frames, 2, 2), dtype=np.float64)

    for v in range(n_videos):
        video_id = f"{split}_{v:03d}"
        background = _render_background(rng, side)
        main_color = np.array([0.85, 0.12, 0.10]) + rng.uniform(-0.05, 0.05, 3)
        limb_color = np.array([0.10, 0.15, 0.88]) + rng.uniform(-0.05, 0.05, 3)

        amp = rng.uniform(0.25 * max_amp, max_amp, size=2)
        freq = rng.uniform(0.5, 1.5, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        dtheta = rng.uniform(-0.35, 0.35)

        t = np.arange(n_frames)
        angles = 2.0 * np.pi * freq[:, None] * t[None, :] / n_frames + phase[:, None]
        centers = half + amp[:, None] * np.sin(angles)  # (xy, t)
        thetas = theta0 + dtheta * t

        frames: FrameSequence = []
        for k in range(n_frames):
            cx, cy = centers[0, k], centers[1, k]
            lx = cx + orbit * np.cos(thetas[k])
            ly = cy + orbit * np.sin(thetas[k])
            img = background.copy()
            _paint_disc(img, xs, ys, cx, cy, r_main, main_color)
            _paint_disc(img, xs, ys, lx, ly, r_limb, limb_color)
            frames.append(
                Frame(
                    pixels=img.astype(np.float32),
                    source_id=video_id,
                    index=k,
                )
            )
            tracks[v, k, 0] = (cx, cy)
            tracks[v, k, 1] = (lx, ly)
        videos.append(frames)
        video_ids.append(video_id)

    return VideoDataset(
        videos=videos,
        video_ids=video_ids,
        split=split,
        tracks=tracks,
    )


def _render_background(rng: np.random.Generator, side: int) -> np.ndarray:
    base = rng.uniform(0.3, 0.5)
    coarse = base + rng.normal(0.0, 0.08, size=(6, 6))
    gray = cv2.resize(coarse, (side, side), interpolation=cv2.INTER_LINEAR)
    gray = np.clip(gray, 0.15, 0.65)
    tint = rng.uniform(-0.03, 0.03, size=3)
    return np.clip(gray[..., None] + tint[None, None, :], 0.0, 1.0)


def _paint_disc(img, xs, ys, cx, cy, radius, color) -> None:
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    img *= 1.0 - coverage
    img += coverage * color[None, None, :]


# --- on-disk layout --------------------------------------------------------


def save_dataset(dataset: VideoDataset, root: str | Path) -> Path:
    """Write ``<root>/<split>/<video_id>/<%07d>.png`` plus tracks CSV."""
    split_dir = Path(root) / dataset.split
    for video_id, frames in zip(dataset.video_ids, dataset.videos):
        video_dir = split_dir / video_id
        video_dir.mkdir(parents=True, exist_ok=True)
        for frame in frames:
            save_frame_png(video_dir / f"{frame.index:07d}.png", frame.pixels)
    if dataset.tracks is not None:
        write_tracks_csv(split_dir / "tracks.csv", dataset.video_ids, dataset.tracks)
    return split_dir


def save_frame_png(path: str | Path, pixels: np.ndarray) -> None:
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def write_tracks_csv(path: str | Path, video_ids: list[str], tracks: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "frame", "point_id", "x", "y"])
        for v, video_id in enumerate(video_ids):
            for k in range(tracks.shape[1]):
                for p in range(tracks.shape[2]):
                    x, y = tracks[v, k, p]
                    writer.writerow([video_id, k, p, f"{x:.4f}", f"{y:.4f}"])


def load_dataset(
    root: str | Path,
    split: str = "train",
    preprocess_to: int | None = None,
) -> VideoDataset:
    """Load a split directory written by ``save_dataset``."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise NotFound(f"dataset split not found: {split_dir}")
    video_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
    if not video_dirs:
        raise NotFound(f"no videos under {split_dir}")
    videos, video_ids = [], []
    for video_dir in video_dirs:
        frames = load_video(video_dir, source_id=video_dir.name)
        if preprocess_to is not None:
            frames = [preprocess(f, preprocess_to) for f in frames]
        videos.append(frames)
        video_ids.append(video_dir.name)
    return VideoDataset(videos=videos, video_ids=video_ids, split=split, root=Path(root))


# --- torch bridging --------------------------------------------------------


def to_batch(frames: Frame | np.ndarray | list) -> torch.Tensor:
    """Stack frames into a float32 (B, 3, H, W) tensor."""
    if isinstance(frames, (Frame, np.ndarray)):
        frames = [frames]
    arrays = [f.pixels if isinstance(f, Frame) else np.asarray(f) for f in frames]
    batch = np.stack([a.astype(np.float32) for a in arrays])
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous()


def from_batch(batch: torch.Tensor) -> np.ndarray:
    """Back to (B, H, W, 3) float32 numpy."""
    return batch.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)
